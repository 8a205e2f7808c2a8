#pragma once

#include <cstddef>

// Data-parallel inner loops behind the tensor engine. Every routine has a
// scalar reference implementation and may have SIMD variants; the active
// backend is picked once at startup (cpuid, overridable with HDSEG_KERNELS=
// scalar|avx2|neon) and stays fixed for the process, so repeated runs are
// bit-identical.
//
// GEMM conventions, all row-major, all accumulating into C:
//   gemm_nn(m,k,n): C[m x n] += A[m x k] * B[k x n]
//   gemm_tn(m,k,n): C[m x n] += A^T * B, with A stored [k x m]
//   gemm_nt(m,k,n): C[m x n] += A * B^T, with B stored [n x k]

namespace hdseg::kern {

enum class Backend { Scalar, Avx2, Neon };

Backend active_backend();
const char* backend_name(Backend b);

// test hook; not for production code paths
void force_backend(Backend b);
void reset_backend();

#define HDSEG_KERN_DECL(T)                                                  \
    void add(const T* a, const T* b, T* out, size_t n);                     \
    void sub(const T* a, const T* b, T* out, size_t n);                     \
    void mul(const T* a, const T* b, T* out, size_t n);                     \
    void scale(T s, const T* x, T* out, size_t n);                          \
    void axpy(T a, const T* x, T* y, size_t n);                             \
    void relu(const T* x, T* out, size_t n);                                \
    void relu_mask_grad(const T* x, const T* g, T* acc, size_t n);          \
    T dot(const T* a, const T* b, size_t n);                                \
    T sum(const T* x, size_t n);                                            \
    T sumsq(const T* x, size_t n);                                          \
    void gemm_nn(int m, int k, int n, const T* A, const T* B, T* C);        \
    void gemm_tn(int m, int k, int n, const T* A, const T* B, T* C);        \
    void gemm_nt(int m, int k, int n, const T* A, const T* B, T* C);

HDSEG_KERN_DECL(float)
HDSEG_KERN_DECL(double)

#undef HDSEG_KERN_DECL

}  // namespace hdseg::kern
