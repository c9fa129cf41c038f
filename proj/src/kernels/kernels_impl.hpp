#pragma once

// Internal: per-backend entry points. The public API in kernels.hpp routes to
// one of these sets after runtime detection.

#include <cstddef>

namespace xmark::kernels::scalar {
void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);
void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);
void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);
void axpy(float alpha, const float* x, float* y, std::size_t n);
void vadd(const float* a, const float* b, float* out, std::size_t n);
void vsub(const float* a, const float* b, float* out, std::size_t n);
void vmul(const float* a, const float* b, float* out, std::size_t n);
void vscale(float alpha, float* x, std::size_t n);
void clamp01(const float* x, float* y, std::size_t n);
void relu_forward(const float* x, float* y, std::size_t n);
void relu_backward(const float* x, const float* dy, float* dx, std::size_t n);
void leaky_relu_forward(const float* x, float* y, float slope, std::size_t n);
void leaky_relu_backward(const float* x, const float* dy, float* dx, float slope, std::size_t n);
float vsum(const float* x, std::size_t n);
float vdot(const float* a, const float* b, std::size_t n);
float vasum(const float* x, std::size_t n);
float vmax_abs(const float* x, std::size_t n);
void adamw_step(float* p, float* m, float* v, const float* g, std::size_t n,
                float lr, float beta1, float beta2, float eps, float weight_decay,
                float bias_c1, float bias_c2);
}  // namespace xmark::kernels::scalar

namespace xmark::kernels::avx2 {
void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);
void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);
void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);
void axpy(float alpha, const float* x, float* y, std::size_t n);
void vadd(const float* a, const float* b, float* out, std::size_t n);
void vsub(const float* a, const float* b, float* out, std::size_t n);
void vmul(const float* a, const float* b, float* out, std::size_t n);
void vscale(float alpha, float* x, std::size_t n);
void clamp01(const float* x, float* y, std::size_t n);
void relu_forward(const float* x, float* y, std::size_t n);
void relu_backward(const float* x, const float* dy, float* dx, std::size_t n);
void leaky_relu_forward(const float* x, float* y, float slope, std::size_t n);
void leaky_relu_backward(const float* x, const float* dy, float* dx, float slope, std::size_t n);
float vsum(const float* x, std::size_t n);
float vdot(const float* a, const float* b, std::size_t n);
float vasum(const float* x, std::size_t n);
float vmax_abs(const float* x, std::size_t n);
void adamw_step(float* p, float* m, float* v, const float* g, std::size_t n,
                float lr, float beta1, float beta2, float eps, float weight_decay,
                float bias_c1, float bias_c2);
}  // namespace xmark::kernels::avx2

namespace xmark::kernels::detail {
// Static row partition shared by both gemm backends: rows [begin,end) per thread.
void parallel_rows(int m, const void* fn_ctx, void (*fn)(const void*, int, int));
}  // namespace xmark::kernels::detail
