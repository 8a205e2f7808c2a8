#include "hdseg/kernels.hpp"

#include <cstdlib>
#include <cstring>

#include "kernels_impl.hpp"

namespace hdseg::kern {

namespace {

Backend detect() {
    if (const char* env = std::getenv("HDSEG_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return Backend::Scalar;
#ifdef HDSEG_HAVE_AVX2
        if (std::strcmp(env, "avx2") == 0) return Backend::Avx2;
#endif
#ifdef HDSEG_HAVE_NEON
        if (std::strcmp(env, "neon") == 0) return Backend::Neon;
#endif
        return Backend::Scalar;  // unknown or unavailable name: fail safe
    }
#ifdef HDSEG_HAVE_AVX2
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Backend::Avx2;
#endif
#ifdef HDSEG_HAVE_NEON
    return Backend::Neon;
#endif
    return Backend::Scalar;
}

Backend g_backend = detect();
bool g_forced = false;

}  // namespace

Backend active_backend() { return g_backend; }

const char* backend_name(Backend b) {
    switch (b) {
        case Backend::Avx2: return "avx2";
        case Backend::Neon: return "neon";
        default: return "scalar";
    }
}

void force_backend(Backend b) {
    g_backend = b;
    g_forced = true;
}

void reset_backend() {
    g_backend = detect();
    g_forced = false;
}

#ifdef HDSEG_HAVE_AVX2
#define HDSEG_CASE_AVX2(call) \
    case Backend::Avx2: return avx2::call;
#else
#define HDSEG_CASE_AVX2(call)
#endif

#ifdef HDSEG_HAVE_NEON
#define HDSEG_CASE_NEON(call) \
    case Backend::Neon: return neon::call;
#else
#define HDSEG_CASE_NEON(call)
#endif

#define HDSEG_DISPATCH(call)          \
    switch (g_backend) {              \
        HDSEG_CASE_AVX2(call)         \
        HDSEG_CASE_NEON(call)         \
        default: return scalar::call; \
    }

#define HDSEG_KERN_FWD(T)                                                                          \
    void add(const T* a, const T* b, T* out, size_t n) { HDSEG_DISPATCH(add(a, b, out, n)) }       \
    void sub(const T* a, const T* b, T* out, size_t n) { HDSEG_DISPATCH(sub(a, b, out, n)) }       \
    void mul(const T* a, const T* b, T* out, size_t n) { HDSEG_DISPATCH(mul(a, b, out, n)) }       \
    void scale(T s, const T* x, T* out, size_t n) { HDSEG_DISPATCH(scale(s, x, out, n)) }          \
    void axpy(T a, const T* x, T* y, size_t n) { HDSEG_DISPATCH(axpy(a, x, y, n)) }                \
    void relu(const T* x, T* out, size_t n) { HDSEG_DISPATCH(relu(x, out, n)) }                    \
    void relu_mask_grad(const T* x, const T* g, T* acc, size_t n) {                                \
        HDSEG_DISPATCH(relu_mask_grad(x, g, acc, n))                                               \
    }                                                                                              \
    T dot(const T* a, const T* b, size_t n) { HDSEG_DISPATCH(dot(a, b, n)) }                       \
    T sum(const T* x, size_t n) { HDSEG_DISPATCH(sum(x, n)) }                                      \
    T sumsq(const T* x, size_t n) { HDSEG_DISPATCH(sumsq(x, n)) }                                  \
    void gemm_nn(int m, int k, int n, const T* A, const T* B, T* C) {                              \
        HDSEG_DISPATCH(gemm_nn(m, k, n, A, B, C))                                                  \
    }                                                                                              \
    void gemm_tn(int m, int k, int n, const T* A, const T* B, T* C) {                              \
        HDSEG_DISPATCH(gemm_tn(m, k, n, A, B, C))                                                  \
    }                                                                                              \
    void gemm_nt(int m, int k, int n, const T* A, const T* B, T* C) {                              \
        HDSEG_DISPATCH(gemm_nt(m, k, n, A, B, C))                                                  \
    }

HDSEG_KERN_FWD(float)
HDSEG_KERN_FWD(double)

#undef HDSEG_KERN_FWD
#undef HDSEG_DISPATCH
#undef HDSEG_CASE_AVX2
#undef HDSEG_CASE_NEON

}  // namespace hdseg::kern
