// AVX2/FMA kernels. Compiled with -mavx2 -mfma in its own TU; only reached
// after the dispatcher has confirmed cpu support.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <immintrin.h>

#include "kernels_impl.hpp"

namespace xmark::kernels::avx2 {

namespace {

inline float hsum8(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  return _mm_cvtss_f32(lo);
}

// A-element accessors for the broadcast kernel: normal (row-major A) and
// transposed (A stored k-major).
struct ANormal {
  const float* a;
  int lda;  // = k
  float at(int i, int p) const { return a[static_cast<std::size_t>(i) * lda + p]; }
};
struct ATrans {
  const float* a;
  int lda;  // = m
  float at(int i, int p) const { return a[static_cast<std::size_t>(p) * lda + i]; }
};

// c[i0..i0+MR) x [j0..j0+16) block, k-loop with broadcast(A) * row-strip(B).
template <typename AAcc, int MR>
inline void block_fma16(const AAcc& A, const float* b, float* c, int k, int n, int i0, int j0,
                        bool acc) {
  __m256 r[MR][2];
  for (int r_i = 0; r_i < MR; ++r_i) {
    float* crow = c + static_cast<std::size_t>(i0 + r_i) * n + j0;
    if (acc) {
      r[r_i][0] = _mm256_loadu_ps(crow);
      r[r_i][1] = _mm256_loadu_ps(crow + 8);
    } else {
      r[r_i][0] = _mm256_setzero_ps();
      r[r_i][1] = _mm256_setzero_ps();
    }
  }
  for (int p = 0; p < k; ++p) {
    const float* brow = b + static_cast<std::size_t>(p) * n + j0;
    __m256 b0 = _mm256_loadu_ps(brow);
    __m256 b1 = _mm256_loadu_ps(brow + 8);
    for (int r_i = 0; r_i < MR; ++r_i) {
      __m256 av = _mm256_set1_ps(A.at(i0 + r_i, p));
      r[r_i][0] = _mm256_fmadd_ps(av, b0, r[r_i][0]);
      r[r_i][1] = _mm256_fmadd_ps(av, b1, r[r_i][1]);
    }
  }
  for (int r_i = 0; r_i < MR; ++r_i) {
    float* crow = c + static_cast<std::size_t>(i0 + r_i) * n + j0;
    _mm256_storeu_ps(crow, r[r_i][0]);
    _mm256_storeu_ps(crow + 8, r[r_i][1]);
  }
}

template <typename AAcc>
void gemm_broadcast_rows(const AAcc& A, const float* b, float* c, int r0, int r1, int k, int n,
                         bool acc) {
  int n16 = n & ~15;
  int i = r0;
  for (; i + 4 <= r1; i += 4) {
    for (int j = 0; j < n16; j += 16) block_fma16<AAcc, 4>(A, b, c, k, n, i, j, acc);
  }
  for (; i < r1; ++i) {
    for (int j = 0; j < n16; j += 16) block_fma16<AAcc, 1>(A, b, c, k, n, i, j, acc);
  }
  // Column tail: scalar, same per-element accumulation order as the wide path.
  if (n16 < n) {
    for (int r = r0; r < r1; ++r) {
      for (int j = n16; j < n; ++j) {
        float s = acc ? c[static_cast<std::size_t>(r) * n + j] : 0.0f;
        for (int p = 0; p < k; ++p) s += A.at(r, p) * b[static_cast<std::size_t>(p) * n + j];
        c[static_cast<std::size_t>(r) * n + j] = s;
      }
    }
  }
}

struct GemmCtx {
  const float* a;
  const float* b;
  float* c;
  int m, k, n;
  bool acc;
};

void gemm_nn_rows(const void* ctx_v, int r0, int r1) {
  const GemmCtx& ctx = *static_cast<const GemmCtx*>(ctx_v);
  ANormal A{ctx.a, ctx.k};
  gemm_broadcast_rows(A, ctx.b, ctx.c, r0, r1, ctx.k, ctx.n, ctx.acc);
}

void gemm_tn_rows(const void* ctx_v, int r0, int r1) {
  const GemmCtx& ctx = *static_cast<const GemmCtx*>(ctx_v);
  ATrans A{ctx.a, ctx.m};
  gemm_broadcast_rows(A, ctx.b, ctx.c, r0, r1, ctx.k, ctx.n, ctx.acc);
}

// nt: both operand rows are contiguous, use dot products with 4 accumulators.
inline float dot_avx(const float* a, const float* b, int k) {
  __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
  __m256 s2 = _mm256_setzero_ps(), s3 = _mm256_setzero_ps();
  int p = 0;
  for (; p + 32 <= k; p += 32) {
    s0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + p), _mm256_loadu_ps(b + p), s0);
    s1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + p + 8), _mm256_loadu_ps(b + p + 8), s1);
    s2 = _mm256_fmadd_ps(_mm256_loadu_ps(a + p + 16), _mm256_loadu_ps(b + p + 16), s2);
    s3 = _mm256_fmadd_ps(_mm256_loadu_ps(a + p + 24), _mm256_loadu_ps(b + p + 24), s3);
  }
  for (; p + 8 <= k; p += 8)
    s0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + p), _mm256_loadu_ps(b + p), s0);
  float s = hsum8(_mm256_add_ps(_mm256_add_ps(s0, s1), _mm256_add_ps(s2, s3)));
  for (; p < k; ++p) s += a[p] * b[p];
  return s;
}

void gemm_nt_rows(const void* ctx_v, int r0, int r1) {
  const GemmCtx& ctx = *static_cast<const GemmCtx*>(ctx_v);
  for (int i = r0; i < r1; ++i) {
    const float* arow = ctx.a + static_cast<std::size_t>(i) * ctx.k;
    float* crow = ctx.c + static_cast<std::size_t>(i) * ctx.n;
    for (int j = 0; j < ctx.n; ++j) {
      float s = dot_avx(arow, ctx.b + static_cast<std::size_t>(j) * ctx.k, ctx.k);
      crow[j] = ctx.acc ? crow[j] + s : s;
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
  __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void vadd(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void vsub(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void vmul(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void vscale(float alpha, float* x, std::size_t n) {
  __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(x + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) x[i] *= alpha;
}

void clamp01(const float* x, float* y, std::size_t n) {
  __m256 lo = _mm256_setzero_ps(), hi = _mm256_set1_ps(1.0f);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_min_ps(hi, _mm256_max_ps(lo, _mm256_loadu_ps(x + i))));
  for (; i < n; ++i) y[i] = std::min(1.0f, std::max(0.0f, x[i]));
}

void relu_forward(const float* x, float* y, std::size_t n) {
  __m256 z = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_max_ps(z, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_backward(const float* x, const float* dy, float* dx, std::size_t n) {
  __m256 z = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), z, _CMP_GT_OQ);
    __m256 g = _mm256_and_ps(mask, _mm256_loadu_ps(dy + i));
    _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), g));
  }
  for (; i < n; ++i)
    if (x[i] > 0.0f) dx[i] += dy[i];
}

void leaky_relu_forward(const float* x, float* y, float slope, std::size_t n) {
  __m256 z = _mm256_setzero_ps(), sl = _mm256_set1_ps(slope);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 v = _mm256_loadu_ps(x + i);
    __m256 neg = _mm256_mul_ps(sl, v);
    __m256 mask = _mm256_cmp_ps(v, z, _CMP_GT_OQ);
    _mm256_storeu_ps(y + i, _mm256_blendv_ps(neg, v, mask));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : slope * x[i];
}

void leaky_relu_backward(const float* x, const float* dy, float* dx, float slope, std::size_t n) {
  __m256 z = _mm256_setzero_ps(), sl = _mm256_set1_ps(slope);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 g = _mm256_loadu_ps(dy + i);
    __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), z, _CMP_GT_OQ);
    __m256 gv = _mm256_blendv_ps(_mm256_mul_ps(sl, g), g, mask);
    _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), gv));
  }
  for (; i < n; ++i) dx[i] += x[i] > 0.0f ? dy[i] : slope * dy[i];
}

float vsum(const float* x, std::size_t n) {
  __m256 s = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) s = _mm256_add_ps(s, _mm256_loadu_ps(x + i));
  float r = hsum8(s);
  for (; i < n; ++i) r += x[i];
  return r;
}

float vdot(const float* a, const float* b, std::size_t n) {
  return dot_avx(a, b, static_cast<int>(n));
}

float vasum(const float* x, std::size_t n) {
  const __m256 absmask = _mm256_castsi256_ps(_mm256_set1_epi32(0x7fffffff));
  __m256 s = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) s = _mm256_add_ps(s, _mm256_and_ps(absmask, _mm256_loadu_ps(x + i)));
  float r = hsum8(s);
  for (; i < n; ++i) r += std::fabs(x[i]);
  return r;
}

float vmax_abs(const float* x, std::size_t n) {
  const __m256 absmask = _mm256_castsi256_ps(_mm256_set1_epi32(0x7fffffff));
  __m256 m = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) m = _mm256_max_ps(m, _mm256_and_ps(absmask, _mm256_loadu_ps(x + i)));
  float lanes[8];
  _mm256_storeu_ps(lanes, m);
  float r = 0.0f;
  for (float l : lanes) r = std::max(r, l);
  for (; i < n; ++i) r = std::max(r, std::fabs(x[i]));
  return r;
}

void adamw_step(float* p, float* m, float* v, const float* g, std::size_t n, float lr, float beta1,
                float beta2, float eps, float weight_decay, float bias_c1, float bias_c2) {
  __m256 b1 = _mm256_set1_ps(beta1), ib1 = _mm256_set1_ps(1.0f - beta1);
  __m256 b2 = _mm256_set1_ps(beta2), ib2 = _mm256_set1_ps(1.0f - beta2);
  __m256 c1 = _mm256_set1_ps(bias_c1), c2 = _mm256_set1_ps(bias_c2);
  __m256 lrv = _mm256_set1_ps(lr), epsv = _mm256_set1_ps(eps), wdv = _mm256_set1_ps(weight_decay);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 gv = _mm256_loadu_ps(g + i);
    __m256 mv = _mm256_fmadd_ps(ib1, gv, _mm256_mul_ps(b1, _mm256_loadu_ps(m + i)));
    __m256 vv = _mm256_fmadd_ps(ib2, _mm256_mul_ps(gv, gv), _mm256_mul_ps(b2, _mm256_loadu_ps(v + i)));
    _mm256_storeu_ps(m + i, mv);
    _mm256_storeu_ps(v + i, vv);
    __m256 mhat = _mm256_mul_ps(mv, c1);
    __m256 vhat = _mm256_mul_ps(vv, c2);
    __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(vhat), epsv);
    __m256 pv = _mm256_loadu_ps(p + i);
    __m256 upd = _mm256_fmadd_ps(wdv, pv, _mm256_div_ps(mhat, denom));
    _mm256_storeu_ps(p + i, _mm256_fnmadd_ps(lrv, upd, pv));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
    float mhat = m[i] * bias_c1;
    float vhat = v[i] * bias_c2;
    p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p[i]);
  }
}

}  // namespace xmark::kernels::avx2
