// AVX-512F kernels. One 8-lane accumulator holds s0..s7 directly; splitting
// it into 256-bit halves and adding gives exactly the scalar tree's
// {t0,t1,t2,t3}, after which the reduction matches the AVX2 path. No FMA.

#include "mrgr/kernels.hpp"

#if defined(__x86_64__) && defined(__AVX512F__)

#include <immintrin.h>

#include <algorithm>
#include <limits>

namespace mrgr::kern {
namespace {

inline double reduce_tree(__m512d acc) {
    __m256d a = _mm512_castpd512_pd256(acc);      // s0..s3
    __m256d b = _mm512_extractf64x4_pd(acc, 1);   // s4..s7
    __m256d t = _mm256_add_pd(a, b);              // {t0,t1,t2,t3}
    __m128d lo = _mm256_castpd256_pd128(t);
    __m128d hi = _mm256_extractf128_pd(t, 1);
    __m128d u = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(u) + _mm_cvtsd_f64(_mm_unpackhi_pd(u, u));
}

double k_dot(size_t n, const double* x, const double* y) {
    const size_t n8 = n & ~size_t(7);
    __m512d acc = _mm512_setzero_pd();
    for (size_t i = 0; i < n8; i += 8) {
        acc = _mm512_add_pd(acc, _mm512_mul_pd(_mm512_loadu_pd(x + i), _mm512_loadu_pd(y + i)));
    }
    double r = reduce_tree(acc);
    for (size_t i = n8; i < n; ++i) r += x[i] * y[i];
    return r;
}

void k_axpy(size_t n, double a, const double* x, double* y) {
    const size_t n8 = n & ~size_t(7);
    const __m512d va = _mm512_set1_pd(a);
    for (size_t i = 0; i < n8; i += 8) {
        __m512d prod = _mm512_mul_pd(va, _mm512_loadu_pd(x + i));
        _mm512_storeu_pd(y + i, _mm512_add_pd(_mm512_loadu_pd(y + i), prod));
    }
    for (size_t i = n8; i < n; ++i) y[i] += a * x[i];
}

void k_scale(size_t n, double a, double* x) {
    const size_t n8 = n & ~size_t(7);
    const __m512d va = _mm512_set1_pd(a);
    for (size_t i = 0; i < n8; i += 8) {
        _mm512_storeu_pd(x + i, _mm512_mul_pd(va, _mm512_loadu_pd(x + i)));
    }
    for (size_t i = n8; i < n; ++i) x[i] *= a;
}

void k_add(size_t n, const double* x, const double* y, double* out) {
    const size_t n8 = n & ~size_t(7);
    for (size_t i = 0; i < n8; i += 8) {
        _mm512_storeu_pd(out + i, _mm512_add_pd(_mm512_loadu_pd(x + i), _mm512_loadu_pd(y + i)));
    }
    for (size_t i = n8; i < n; ++i) out[i] = x[i] + y[i];
}

void k_mul(size_t n, const double* x, const double* y, double* out) {
    const size_t n8 = n & ~size_t(7);
    for (size_t i = 0; i < n8; i += 8) {
        _mm512_storeu_pd(out + i, _mm512_mul_pd(_mm512_loadu_pd(x + i), _mm512_loadu_pd(y + i)));
    }
    for (size_t i = n8; i < n; ++i) out[i] = x[i] * y[i];
}

double k_sum(size_t n, const double* x) {
    const size_t n8 = n & ~size_t(7);
    __m512d acc = _mm512_setzero_pd();
    for (size_t i = 0; i < n8; i += 8) {
        acc = _mm512_add_pd(acc, _mm512_loadu_pd(x + i));
    }
    double r = reduce_tree(acc);
    for (size_t i = n8; i < n; ++i) r += x[i];
    return r;
}

double k_max(size_t n, const double* x) {
    const double ninf = -std::numeric_limits<double>::infinity();
    const size_t n8 = n & ~size_t(7);
    __m512d acc = _mm512_set1_pd(ninf);
    for (size_t i = 0; i < n8; i += 8) {
        acc = _mm512_max_pd(acc, _mm512_loadu_pd(x + i));
    }
    __m256d a = _mm512_castpd512_pd256(acc);
    __m256d b = _mm512_extractf64x4_pd(acc, 1);
    __m256d t = _mm256_max_pd(a, b);
    __m128d lo = _mm256_castpd256_pd128(t);
    __m128d hi = _mm256_extractf128_pd(t, 1);
    __m128d u = _mm_max_pd(lo, hi);
    double r = std::max(_mm_cvtsd_f64(u), _mm_cvtsd_f64(_mm_unpackhi_pd(u, u)));
    for (size_t i = n8; i < n; ++i) r = std::max(r, x[i]);
    return r;
}

const KernelOps g_avx512 = {"avx512", k_dot, k_axpy, k_scale, k_add, k_mul, k_sum, k_max};

} // namespace

const KernelOps* avx512_ops() {
    return __builtin_cpu_supports("avx512f") ? &g_avx512 : nullptr;
}

} // namespace mrgr::kern

#else

namespace mrgr::kern {
const KernelOps* avx512_ops() { return nullptr; }
} // namespace mrgr::kern

#endif
