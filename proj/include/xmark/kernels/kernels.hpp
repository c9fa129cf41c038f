#pragma once

// Data-parallel arithmetic kernels behind the training and evaluation stack.
// Every routine has a scalar reference implementation and an AVX2/FMA variant;
// the backend is picked at runtime (cpuid), overridable via XMARK_KERNELS=scalar
// or set_backend(). Per output element the summation order is fixed, so results
// do not depend on the number of worker threads.

#include <cstddef>

namespace xmark::kernels {

enum class Backend { scalar, avx2 };

Backend active_backend();
void set_backend(Backend b);
bool avx2_supported();
const char* backend_name(Backend b);

// Worker threads used by the gemm family (static row partition).
int thread_count();
void set_thread_count(int n);

// Row-major dense matrix products. `accumulate` adds into c instead of
// overwriting it.
//
//   gemm_nn: c[m,n] = a[m,k] * b[k,n]
//   gemm_tn: c[m,n] = a[k,m]^T * b[k,n]
//   gemm_nt: c[m,n] = a[m,k] * b[n,k]^T
void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);
void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);
void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);

// Elementwise vector ops.
void axpy(float alpha, const float* x, float* y, std::size_t n);  // y += alpha*x
void vadd(const float* a, const float* b, float* out, std::size_t n);
void vsub(const float* a, const float* b, float* out, std::size_t n);
void vmul(const float* a, const float* b, float* out, std::size_t n);
void vscale(float alpha, float* x, std::size_t n);
void vfill(float value, float* x, std::size_t n);
void clamp01(const float* x, float* y, std::size_t n);

void relu_forward(const float* x, float* y, std::size_t n);
// dx += dy where x > 0
void relu_backward(const float* x, const float* dy, float* dx, std::size_t n);
void leaky_relu_forward(const float* x, float* y, float slope, std::size_t n);
void leaky_relu_backward(const float* x, const float* dy, float* dx, float slope, std::size_t n);

// Reductions.
float vsum(const float* x, std::size_t n);
float vdot(const float* a, const float* b, std::size_t n);
float vasum(const float* x, std::size_t n);      // sum of |x_i|
float vmax_abs(const float* x, std::size_t n);   // max |x_i|, 0 for empty

// Decoupled-weight-decay adaptive step (one tensor).
//   m = b1*m + (1-b1)*g ; v = b2*v + (1-b2)*g^2
//   p -= lr * ( mhat / (sqrt(vhat) + eps) + wd * p )
// bias_c1 = 1/(1-b1^t), bias_c2 = 1/(1-b2^t) are precomputed by the caller.
void adamw_step(float* p, float* m, float* v, const float* g, std::size_t n,
                float lr, float beta1, float beta2, float eps, float weight_decay,
                float bias_c1, float bias_c2);

}  // namespace xmark::kernels
