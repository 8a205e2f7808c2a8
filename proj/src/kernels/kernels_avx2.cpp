#ifdef HDSEG_HAVE_AVX2

#include <immintrin.h>

#include <vector>

#include "kernels_impl.hpp"

// AVX2+FMA variants. Semantics match the scalar reference up to floating-point
// reassociation in reductions and GEMM; the equivalence suite pins the allowed
// divergence. Elementwise routines are lane-exact.

namespace hdseg::kern::avx2 {

namespace {

thread_local std::vector<float> scratch_f;
thread_local std::vector<double> scratch_d;

inline std::vector<float>& scratch(float) { return scratch_f; }
inline std::vector<double>& scratch(double) { return scratch_d; }

inline float hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    lo = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, lo);
    lo = _mm_add_ss(lo, sh);
    return _mm_cvtss_f32(lo);
}

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    lo = _mm_add_sd(lo, sh);
    return _mm_cvtsd_f64(lo);
}

// 8x8 blocked transpose: dst[j*rows + i] = src[i*cols + j]
template <typename T>
void transpose(const T* src, T* dst, int rows, int cols) {
    const int BL = 8;
    for (int i0 = 0; i0 < rows; i0 += BL) {
        const int i1 = i0 + BL < rows ? i0 + BL : rows;
        for (int j0 = 0; j0 < cols; j0 += BL) {
            const int j1 = j0 + BL < cols ? j0 + BL : cols;
            for (int i = i0; i < i1; ++i)
                for (int j = j0; j < j1; ++j)
                    dst[static_cast<size_t>(j) * rows + i] = src[static_cast<size_t>(i) * cols + j];
        }
    }
}

}  // namespace

// ---------------------------------------------------------------- float ----

void add(const float* a, const float* b, float* out, size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const float* a, const float* b, float* out, size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const float* a, const float* b, float* out, size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(float s, const float* x, float* out, size_t n) {
    const __m256 vs = _mm256_set1_ps(s);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_mul_ps(vs, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) out[i] = s * x[i];
}

void axpy(float a, const float* x, float* y, size_t n) {
    const __m256 va = _mm256_set1_ps(a);
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) y[i] += a * x[i];
}

void relu(const float* x, float* out, size_t n) {
    const __m256 z = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_max_ps(z, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_mask_grad(const float* x, const float* g, float* acc, size_t n) {
    const __m256 z = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), z, _CMP_GT_OQ);
        const __m256 gm = _mm256_and_ps(mask, _mm256_loadu_ps(g + i));
        _mm256_storeu_ps(acc + i, _mm256_add_ps(_mm256_loadu_ps(acc + i), gm));
    }
    for (; i < n; ++i)
        if (x[i] > 0.0f) acc[i] += g[i];
}

float dot(const float* a, const float* b, size_t n) {
    __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
    __m256 s2 = _mm256_setzero_ps(), s3 = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 32 <= n; i += 32) {
        s0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), s0);
        s1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), s1);
        s2 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 16), _mm256_loadu_ps(b + i + 16), s2);
        s3 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 24), _mm256_loadu_ps(b + i + 24), s3);
    }
    for (; i + 8 <= n; i += 8) s0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), s0);
    float s = hsum(_mm256_add_ps(_mm256_add_ps(s0, s1), _mm256_add_ps(s2, s3)));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

float sum(const float* x, size_t n) {
    __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        s0 = _mm256_add_ps(s0, _mm256_loadu_ps(x + i));
        s1 = _mm256_add_ps(s1, _mm256_loadu_ps(x + i + 8));
    }
    for (; i + 8 <= n; i += 8) s0 = _mm256_add_ps(s0, _mm256_loadu_ps(x + i));
    float s = hsum(_mm256_add_ps(s0, s1));
    for (; i < n; ++i) s += x[i];
    return s;
}

float sumsq(const float* x, size_t n) {
    __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        const __m256 v0 = _mm256_loadu_ps(x + i);
        const __m256 v1 = _mm256_loadu_ps(x + i + 8);
        s0 = _mm256_fmadd_ps(v0, v0, s0);
        s1 = _mm256_fmadd_ps(v1, v1, s1);
    }
    for (; i + 8 <= n; i += 8) {
        const __m256 v = _mm256_loadu_ps(x + i);
        s0 = _mm256_fmadd_ps(v, v, s0);
    }
    float s = hsum(_mm256_add_ps(s0, s1));
    for (; i < n; ++i) s += x[i] * x[i];
    return s;
}

// Blocked axpy-form GEMM: C rows stay in registers/L1 while a k-band of B is
// hot in L2; 4-way k unroll amortizes the C round trip.
void gemm_nn(int m, int k, int n, const float* A, const float* B, float* C) {
    const int KB = 128;
    for (int k0 = 0; k0 < k; k0 += KB) {
        const int kb = (k0 + KB < k ? KB : k - k0);
        for (int i = 0; i < m; ++i) {
            const float* a = A + static_cast<size_t>(i) * k + k0;
            float* c = C + static_cast<size_t>(i) * n;
            int p = 0;
            for (; p + 4 <= kb; p += 4) {
                const float a0s = a[p], a1s = a[p + 1], a2s = a[p + 2], a3s = a[p + 3];
                if (a0s == 0.0f && a1s == 0.0f && a2s == 0.0f && a3s == 0.0f) continue;
                const __m256 a0 = _mm256_set1_ps(a0s);
                const __m256 a1 = _mm256_set1_ps(a1s);
                const __m256 a2 = _mm256_set1_ps(a2s);
                const __m256 a3 = _mm256_set1_ps(a3s);
                const float* b0 = B + static_cast<size_t>(k0 + p) * n;
                const float* b1 = b0 + n;
                const float* b2 = b1 + n;
                const float* b3 = b2 + n;
                int j = 0;
                for (; j + 16 <= n; j += 16) {
                    __m256 c0 = _mm256_loadu_ps(c + j);
                    __m256 c1 = _mm256_loadu_ps(c + j + 8);
                    c0 = _mm256_fmadd_ps(a0, _mm256_loadu_ps(b0 + j), c0);
                    c1 = _mm256_fmadd_ps(a0, _mm256_loadu_ps(b0 + j + 8), c1);
                    c0 = _mm256_fmadd_ps(a1, _mm256_loadu_ps(b1 + j), c0);
                    c1 = _mm256_fmadd_ps(a1, _mm256_loadu_ps(b1 + j + 8), c1);
                    c0 = _mm256_fmadd_ps(a2, _mm256_loadu_ps(b2 + j), c0);
                    c1 = _mm256_fmadd_ps(a2, _mm256_loadu_ps(b2 + j + 8), c1);
                    c0 = _mm256_fmadd_ps(a3, _mm256_loadu_ps(b3 + j), c0);
                    c1 = _mm256_fmadd_ps(a3, _mm256_loadu_ps(b3 + j + 8), c1);
                    _mm256_storeu_ps(c + j, c0);
                    _mm256_storeu_ps(c + j + 8, c1);
                }
                for (; j + 8 <= n; j += 8) {
                    __m256 c0 = _mm256_loadu_ps(c + j);
                    c0 = _mm256_fmadd_ps(a0, _mm256_loadu_ps(b0 + j), c0);
                    c0 = _mm256_fmadd_ps(a1, _mm256_loadu_ps(b1 + j), c0);
                    c0 = _mm256_fmadd_ps(a2, _mm256_loadu_ps(b2 + j), c0);
                    c0 = _mm256_fmadd_ps(a3, _mm256_loadu_ps(b3 + j), c0);
                    _mm256_storeu_ps(c + j, c0);
                }
                for (; j < n; ++j)
                    c[j] += a0s * b0[j] + a1s * b1[j] + a2s * b2[j] + a3s * b3[j];
            }
            for (; p < kb; ++p) {
                const float as = a[p];
                if (as == 0.0f) continue;
                const float* b = B + static_cast<size_t>(k0 + p) * n;
                const __m256 va = _mm256_set1_ps(as);
                int j = 0;
                for (; j + 8 <= n; j += 8)
                    _mm256_storeu_ps(c + j,
                                     _mm256_fmadd_ps(va, _mm256_loadu_ps(b + j), _mm256_loadu_ps(c + j)));
                for (; j < n; ++j) c[j] += as * b[j];
            }
        }
    }
}

void gemm_tn(int m, int k, int n, const float* A, const float* B, float* C) {
    auto& buf = scratch(0.0f);
    if (buf.size() < static_cast<size_t>(m) * k) buf.resize(static_cast<size_t>(m) * k);
    transpose(A, buf.data(), k, m);  // [k x m] -> [m x k]
    gemm_nn(m, k, n, buf.data(), B, C);
}

void gemm_nt(int m, int k, int n, const float* A, const float* B, float* C) {
    auto& buf = scratch(0.0f);
    if (buf.size() < static_cast<size_t>(n) * k) buf.resize(static_cast<size_t>(n) * k);
    transpose(B, buf.data(), n, k);  // [n x k] -> [k x n]
    gemm_nn(m, k, n, A, buf.data(), C);
}

// --------------------------------------------------------------- double ----

void add(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(double s, const double* x, double* out, size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(vs, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) out[i] = s * x[i];
}

void axpy(double a, const double* x, double* y, size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += a * x[i];
}

void relu(const double* x, double* out, size_t n) {
    const __m256d z = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_max_pd(z, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_mask_grad(const double* x, const double* g, double* acc, size_t n) {
    const __m256d z = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), z, _CMP_GT_OQ);
        const __m256d gm = _mm256_and_pd(mask, _mm256_loadu_pd(g + i));
        _mm256_storeu_pd(acc + i, _mm256_add_pd(_mm256_loadu_pd(acc + i), gm));
    }
    for (; i < n; ++i)
        if (x[i] > 0.0) acc[i] += g[i];
}

double dot(const double* a, const double* b, size_t n) {
    __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
        s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), s1);
    }
    for (; i + 4 <= n; i += 4) s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
    double s = hsum(_mm256_add_pd(s0, s1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

double sum(const double* x, size_t n) {
    __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 = _mm256_add_pd(s0, _mm256_loadu_pd(x + i));
        s1 = _mm256_add_pd(s1, _mm256_loadu_pd(x + i + 4));
    }
    for (; i + 4 <= n; i += 4) s0 = _mm256_add_pd(s0, _mm256_loadu_pd(x + i));
    double s = hsum(_mm256_add_pd(s0, s1));
    for (; i < n; ++i) s += x[i];
    return s;
}

double sumsq(const double* x, size_t n) {
    __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256d v0 = _mm256_loadu_pd(x + i);
        const __m256d v1 = _mm256_loadu_pd(x + i + 4);
        s0 = _mm256_fmadd_pd(v0, v0, s0);
        s1 = _mm256_fmadd_pd(v1, v1, s1);
    }
    for (; i + 4 <= n; i += 4) {
        const __m256d v = _mm256_loadu_pd(x + i);
        s0 = _mm256_fmadd_pd(v, v, s0);
    }
    double s = hsum(_mm256_add_pd(s0, s1));
    for (; i < n; ++i) s += x[i] * x[i];
    return s;
}

void gemm_nn(int m, int k, int n, const double* A, const double* B, double* C) {
    const int KB = 128;
    for (int k0 = 0; k0 < k; k0 += KB) {
        const int kb = (k0 + KB < k ? KB : k - k0);
        for (int i = 0; i < m; ++i) {
            const double* a = A + static_cast<size_t>(i) * k + k0;
            double* c = C + static_cast<size_t>(i) * n;
            int p = 0;
            for (; p + 2 <= kb; p += 2) {
                const double a0s = a[p], a1s = a[p + 1];
                if (a0s == 0.0 && a1s == 0.0) continue;
                const __m256d a0 = _mm256_set1_pd(a0s);
                const __m256d a1 = _mm256_set1_pd(a1s);
                const double* b0 = B + static_cast<size_t>(k0 + p) * n;
                const double* b1 = b0 + n;
                int j = 0;
                for (; j + 8 <= n; j += 8) {
                    __m256d c0 = _mm256_loadu_pd(c + j);
                    __m256d c1 = _mm256_loadu_pd(c + j + 4);
                    c0 = _mm256_fmadd_pd(a0, _mm256_loadu_pd(b0 + j), c0);
                    c1 = _mm256_fmadd_pd(a0, _mm256_loadu_pd(b0 + j + 4), c1);
                    c0 = _mm256_fmadd_pd(a1, _mm256_loadu_pd(b1 + j), c0);
                    c1 = _mm256_fmadd_pd(a1, _mm256_loadu_pd(b1 + j + 4), c1);
                    _mm256_storeu_pd(c + j, c0);
                    _mm256_storeu_pd(c + j + 4, c1);
                }
                for (; j + 4 <= n; j += 4) {
                    __m256d c0 = _mm256_loadu_pd(c + j);
                    c0 = _mm256_fmadd_pd(a0, _mm256_loadu_pd(b0 + j), c0);
                    c0 = _mm256_fmadd_pd(a1, _mm256_loadu_pd(b1 + j), c0);
                    _mm256_storeu_pd(c + j, c0);
                }
                for (; j < n; ++j) c[j] += a0s * b0[j] + a1s * b1[j];
            }
            for (; p < kb; ++p) {
                const double as = a[p];
                if (as == 0.0) continue;
                const double* b = B + static_cast<size_t>(k0 + p) * n;
                const __m256d va = _mm256_set1_pd(as);
                int j = 0;
                for (; j + 4 <= n; j += 4)
                    _mm256_storeu_pd(c + j,
                                     _mm256_fmadd_pd(va, _mm256_loadu_pd(b + j), _mm256_loadu_pd(c + j)));
                for (; j < n; ++j) c[j] += as * b[j];
            }
        }
    }
}

void gemm_tn(int m, int k, int n, const double* A, const double* B, double* C) {
    auto& buf = scratch(0.0);
    if (buf.size() < static_cast<size_t>(m) * k) buf.resize(static_cast<size_t>(m) * k);
    transpose(A, buf.data(), k, m);
    gemm_nn(m, k, n, buf.data(), B, C);
}

void gemm_nt(int m, int k, int n, const double* A, const double* B, double* C) {
    auto& buf = scratch(0.0);
    if (buf.size() < static_cast<size_t>(n) * k) buf.resize(static_cast<size_t>(n) * k);
    transpose(B, buf.data(), n, k);
    gemm_nn(m, k, n, A, buf.data(), C);
}

}  // namespace hdseg::kern::avx2

#endif  // HDSEG_HAVE_AVX2
