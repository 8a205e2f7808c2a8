#include "kernels_impl.hpp"

// Reference kernels. These define the semantics the SIMD variants are
// equivalence-tested against.

namespace hdseg::kern::scalar {

template <typename T>
static void add_(const T* a, const T* b, T* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
static void sub_(const T* a, const T* b, T* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <typename T>
static void mul_(const T* a, const T* b, T* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
static void scale_(T s, const T* x, T* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = s * x[i];
}

template <typename T>
static void axpy_(T a, const T* x, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
static void relu_(const T* x, T* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
static void relu_mask_grad_(const T* x, const T* g, T* acc, size_t n) {
    for (size_t i = 0; i < n; ++i)
        if (x[i] > T(0)) acc[i] += g[i];
}

template <typename T>
static T dot_(const T* a, const T* b, size_t n) {
    T s = 0;
    for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

template <typename T>
static T sum_(const T* x, size_t n) {
    T s = 0;
    for (size_t i = 0; i < n; ++i) s += x[i];
    return s;
}

template <typename T>
static T sumsq_(const T* x, size_t n) {
    T s = 0;
    for (size_t i = 0; i < n; ++i) s += x[i] * x[i];
    return s;
}

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
static void gemm_nn_(int m, int k, int n, const T* A, const T* B, T* C) {
    for (int i = 0; i < m; ++i) {
        T* c = C + static_cast<size_t>(i) * n;
        const T* a = A + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const T ap = a[p];
            if (ap == T(0)) continue;
            const T* b = B + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) c[j] += ap * b[j];
        }
    }
}

// C[m x n] += A^T * B, A stored [k x m]
template <typename T>
static void gemm_tn_(int m, int k, int n, const T* A, const T* B, T* C) {
    for (int p = 0; p < k; ++p) {
        const T* ar = A + static_cast<size_t>(p) * m;
        const T* b = B + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const T ap = ar[i];
            if (ap == T(0)) continue;
            T* c = C + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) c[j] += ap * b[j];
        }
    }
}

// C[m x n] += A * B^T, B stored [n x k]
template <typename T>
static void gemm_nt_(int m, int k, int n, const T* A, const T* B, T* C) {
    for (int i = 0; i < m; ++i) {
        const T* a = A + static_cast<size_t>(i) * k;
        T* c = C + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* b = B + static_cast<size_t>(j) * k;
            T s = 0;
            for (int p = 0; p < k; ++p) s += a[p] * b[p];
            c[j] += s;
        }
    }
}

#define HDSEG_KERN_DEFINE(T)                                                              \
    void add(const T* a, const T* b, T* out, size_t n) { add_(a, b, out, n); }            \
    void sub(const T* a, const T* b, T* out, size_t n) { sub_(a, b, out, n); }            \
    void mul(const T* a, const T* b, T* out, size_t n) { mul_(a, b, out, n); }            \
    void scale(T s, const T* x, T* out, size_t n) { scale_(s, x, out, n); }               \
    void axpy(T a, const T* x, T* y, size_t n) { axpy_(a, x, y, n); }                     \
    void relu(const T* x, T* out, size_t n) { relu_(x, out, n); }                         \
    void relu_mask_grad(const T* x, const T* g, T* acc, size_t n) {                       \
        relu_mask_grad_(x, g, acc, n);                                                    \
    }                                                                                     \
    T dot(const T* a, const T* b, size_t n) { return dot_(a, b, n); }                     \
    T sum(const T* x, size_t n) { return sum_(x, n); }                                    \
    T sumsq(const T* x, size_t n) { return sumsq_(x, n); }                                \
    void gemm_nn(int m, int k, int n, const T* A, const T* B, T* C) {                     \
        gemm_nn_(m, k, n, A, B, C);                                                       \
    }                                                                                     \
    void gemm_tn(int m, int k, int n, const T* A, const T* B, T* C) {                     \
        gemm_tn_(m, k, n, A, B, C);                                                       \
    }                                                                                     \
    void gemm_nt(int m, int k, int n, const T* A, const T* B, T* C) {                     \
        gemm_nt_(m, k, n, A, B, C);                                                       \
    }

HDSEG_KERN_DEFINE(float)
HDSEG_KERN_DEFINE(double)

#undef HDSEG_KERN_DEFINE

}  // namespace hdseg::kern::scalar
