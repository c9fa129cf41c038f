// Scalar reference kernels. Kept deliberately plain: these define the
// semantics the SIMD variants are tested against.

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "kernels_impl.hpp"

namespace xmark::kernels::scalar {

namespace {

struct GemmCtx {
  const float* a;
  const float* b;
  float* c;
  int m, k, n;
  bool acc;
};

void gemm_nn_rows(const void* ctx_v, int r0, int r1) {
  const GemmCtx& ctx = *static_cast<const GemmCtx*>(ctx_v);
  for (int i = r0; i < r1; ++i) {
    const float* arow = ctx.a + static_cast<std::size_t>(i) * ctx.k;
    float* crow = ctx.c + static_cast<std::size_t>(i) * ctx.n;
    for (int j = 0; j < ctx.n; ++j) {
      float s = ctx.acc ? crow[j] : 0.0f;
      for (int p = 0; p < ctx.k; ++p) s += arow[p] * ctx.b[static_cast<std::size_t>(p) * ctx.n + j];
      crow[j] = s;
    }
  }
}

void gemm_tn_rows(const void* ctx_v, int r0, int r1) {
  const GemmCtx& ctx = *static_cast<const GemmCtx*>(ctx_v);
  for (int i = r0; i < r1; ++i) {
    float* crow = ctx.c + static_cast<std::size_t>(i) * ctx.n;
    for (int j = 0; j < ctx.n; ++j) {
      float s = ctx.acc ? crow[j] : 0.0f;
      for (int p = 0; p < ctx.k; ++p)
        s += ctx.a[static_cast<std::size_t>(p) * ctx.m + i] * ctx.b[static_cast<std::size_t>(p) * ctx.n + j];
      crow[j] = s;
    }
  }
}

void gemm_nt_rows(const void* ctx_v, int r0, int r1) {
  const GemmCtx& ctx = *static_cast<const GemmCtx*>(ctx_v);
  for (int i = r0; i < r1; ++i) {
    const float* arow = ctx.a + static_cast<std::size_t>(i) * ctx.k;
    float* crow = ctx.c + static_cast<std::size_t>(i) * ctx.n;
    for (int j = 0; j < ctx.n; ++j) {
      const float* brow = ctx.b + static_cast<std::size_t>(j) * ctx.k;
      float s = ctx.acc ? crow[j] : 0.0f;
      for (int p = 0; p < ctx.k; ++p) s += arow[p] * brow[p];
      crow[j] = s;
    }
  }
}

}  // namespace

void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
  GemmCtx ctx{a, b, c, m, k, n, accumulate};
  detail::parallel_rows(m, &ctx, gemm_nn_rows);
}

void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
  GemmCtx ctx{a, b, c, m, k, n, accumulate};
  detail::parallel_rows(m, &ctx, gemm_tn_rows);
}

void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
  GemmCtx ctx{a, b, c, m, k, n, accumulate};
  detail::parallel_rows(m, &ctx, gemm_nt_rows);
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void vadd(const float* a, const float* b, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void vsub(const float* a, const float* b, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void vmul(const float* a, const float* b, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void vscale(float alpha, float* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

void clamp01(const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::min(1.0f, std::max(0.0f, x[i]));
}

void relu_forward(const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_backward(const float* x, const float* dy, float* dx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (x[i] > 0.0f) dx[i] += dy[i];
}

void leaky_relu_forward(const float* x, float* y, float slope, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : slope * x[i];
}

void leaky_relu_backward(const float* x, const float* dy, float* dx, float slope, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dx[i] += x[i] > 0.0f ? dy[i] : slope * dy[i];
}

float vsum(const float* x, std::size_t n) {
  float s = 0.0f;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

float vdot(const float* a, const float* b, std::size_t n) {
  float s = 0.0f;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

float vasum(const float* x, std::size_t n) {
  float s = 0.0f;
  for (std::size_t i = 0; i < n; ++i) s += std::fabs(x[i]);
  return s;
}

float vmax_abs(const float* x, std::size_t n) {
  float m = 0.0f;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::fabs(x[i]));
  return m;
}

void adamw_step(float* p, float* m, float* v, const float* g, std::size_t n, float lr, float beta1,
                float beta2, float eps, float weight_decay, float bias_c1, float bias_c2) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
    float mhat = m[i] * bias_c1;
    float vhat = v[i] * bias_c2;
    p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p[i]);
  }
}

}  // namespace xmark::kernels::scalar
