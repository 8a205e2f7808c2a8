#pragma once

#include <cstddef>

// Per-backend entry points. Only the dispatcher includes this.

namespace hdseg::kern {

#define HDSEG_KERN_BACKEND(ns, T)                                           \
    namespace ns {                                                          \
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
    void gemm_nt(int m, int k, int n, const T* A, const T* B, T* C);        \
    }

HDSEG_KERN_BACKEND(scalar, float)
HDSEG_KERN_BACKEND(scalar, double)

#ifdef HDSEG_HAVE_AVX2
HDSEG_KERN_BACKEND(avx2, float)
HDSEG_KERN_BACKEND(avx2, double)
#endif

#ifdef HDSEG_HAVE_NEON
HDSEG_KERN_BACKEND(neon, float)
HDSEG_KERN_BACKEND(neon, double)
#endif

#undef HDSEG_KERN_BACKEND

}  // namespace hdseg::kern
