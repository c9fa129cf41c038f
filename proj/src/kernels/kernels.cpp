#include "xmark/kernels/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <thread>
#include <vector>

#include "kernels_impl.hpp"

namespace xmark::kernels {

bool avx2_supported() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

Backend pick_initial_backend() {
  if (const char* env = std::getenv("XMARK_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
    if (std::strcmp(env, "avx2") == 0 && avx2_supported()) return Backend::avx2;
  }
  return avx2_supported() ? Backend::avx2 : Backend::scalar;
}

int pick_initial_threads() {
  if (const char* env = std::getenv("XMARK_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::clamp(hw, 1u, 4u));
}

Backend g_backend = pick_initial_backend();
int g_threads = pick_initial_threads();

}  // namespace

Backend active_backend() { return g_backend; }

void set_backend(Backend b) {
  if (b == Backend::avx2 && !avx2_supported()) b = Backend::scalar;
  g_backend = b;
}

const char* backend_name(Backend b) {
  return b == Backend::avx2 ? "avx2" : "scalar";
}

int thread_count() { return g_threads; }
void set_thread_count(int n) { g_threads = std::max(1, n); }

namespace detail {

void parallel_rows(int m, const void* fn_ctx, void (*fn)(const void*, int, int)) {
  int nt = std::min(g_threads, m);
  if (nt <= 1) {
    fn(fn_ctx, 0, m);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(nt - 1);
  int chunk = (m + nt - 1) / nt;
  for (int t = 1; t < nt; ++t) {
    int b = t * chunk, e = std::min(m, b + chunk);
    if (b >= e) break;
    workers.emplace_back([=] { fn(fn_ctx, b, e); });
  }
  fn(fn_ctx, 0, std::min(m, chunk));
  for (auto& w : workers) w.join();
}

}  // namespace detail

#define XMARK_DISPATCH(fname, ...)                  \
  do {                                              \
    if (g_backend == Backend::avx2)                 \
      return avx2::fname(__VA_ARGS__);              \
    return scalar::fname(__VA_ARGS__);              \
  } while (0)

void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  XMARK_DISPATCH(gemm_nn, a, b, c, m, k, n, acc);
}
void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  XMARK_DISPATCH(gemm_tn, a, b, c, m, k, n, acc);
}
void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  XMARK_DISPATCH(gemm_nt, a, b, c, m, k, n, acc);
}
void axpy(float alpha, const float* x, float* y, std::size_t n) {
  XMARK_DISPATCH(axpy, alpha, x, y, n);
}
void vadd(const float* a, const float* b, float* out, std::size_t n) {
  XMARK_DISPATCH(vadd, a, b, out, n);
}
void vsub(const float* a, const float* b, float* out, std::size_t n) {
  XMARK_DISPATCH(vsub, a, b, out, n);
}
void vmul(const float* a, const float* b, float* out, std::size_t n) {
  XMARK_DISPATCH(vmul, a, b, out, n);
}
void vscale(float alpha, float* x, std::size_t n) { XMARK_DISPATCH(vscale, alpha, x, n); }
void vfill(float value, float* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = value;
}
void clamp01(const float* x, float* y, std::size_t n) { XMARK_DISPATCH(clamp01, x, y, n); }
void relu_forward(const float* x, float* y, std::size_t n) { XMARK_DISPATCH(relu_forward, x, y, n); }
void relu_backward(const float* x, const float* dy, float* dx, std::size_t n) {
  XMARK_DISPATCH(relu_backward, x, dy, dx, n);
}
void leaky_relu_forward(const float* x, float* y, float slope, std::size_t n) {
  XMARK_DISPATCH(leaky_relu_forward, x, y, slope, n);
}
void leaky_relu_backward(const float* x, const float* dy, float* dx, float slope, std::size_t n) {
  XMARK_DISPATCH(leaky_relu_backward, x, dy, dx, slope, n);
}
float vsum(const float* x, std::size_t n) { XMARK_DISPATCH(vsum, x, n); }
float vdot(const float* a, const float* b, std::size_t n) { XMARK_DISPATCH(vdot, a, b, n); }
float vasum(const float* x, std::size_t n) { XMARK_DISPATCH(vasum, x, n); }
float vmax_abs(const float* x, std::size_t n) { XMARK_DISPATCH(vmax_abs, x, n); }
void adamw_step(float* p, float* m, float* v, const float* g, std::size_t n, float lr, float beta1,
                float beta2, float eps, float weight_decay, float bias_c1, float bias_c2) {
  XMARK_DISPATCH(adamw_step, p, m, v, g, n, lr, beta1, beta2, eps, weight_decay, bias_c1, bias_c2);
}

#undef XMARK_DISPATCH

}  // namespace xmark::kernels
