// AVX2 kernels. Two 4-lane accumulators hold the canonical partial sums
// s0..s3 / s4..s7; the reduction tree matches the scalar reference exactly:
//   accA+accB = {t0,t1,t2,t3}, lo128+hi128 = {u0,u1}, u0+u1 = r.
// Explicit mul+add (no FMA) keeps rounding identical to scalar.

#include "mrgr/kernels.hpp"

#if defined(__x86_64__) && defined(__AVX2__)

#include <immintrin.h>

#include <algorithm>
#include <limits>

namespace mrgr::kern {
namespace {

inline double reduce_tree(__m256d acc_a, __m256d acc_b) {
    __m256d t = _mm256_add_pd(acc_a, acc_b);
    __m128d lo = _mm256_castpd256_pd128(t);
    __m128d hi = _mm256_extractf128_pd(t, 1);
    __m128d u = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(u) + _mm_cvtsd_f64(_mm_unpackhi_pd(u, u));
}

double k_dot(size_t n, const double* x, const double* y) {
    const size_t n8 = n & ~size_t(7);
    __m256d acc_a = _mm256_setzero_pd();
    __m256d acc_b = _mm256_setzero_pd();
    for (size_t i = 0; i < n8; i += 8) {
        acc_a = _mm256_add_pd(acc_a, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
        acc_b = _mm256_add_pd(acc_b, _mm256_mul_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
    }
    double r = reduce_tree(acc_a, acc_b);
    for (size_t i = n8; i < n; ++i) r += x[i] * y[i];
    return r;
}

void k_axpy(size_t n, double a, const double* x, double* y) {
    const size_t n4 = n & ~size_t(3);
    const __m256d va = _mm256_set1_pd(a);
    for (size_t i = 0; i < n4; i += 4) {
        __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
    }
    for (size_t i = n4; i < n; ++i) y[i] += a * x[i];
}

void k_scale(size_t n, double a, double* x) {
    const size_t n4 = n & ~size_t(3);
    const __m256d va = _mm256_set1_pd(a);
    for (size_t i = 0; i < n4; i += 4) {
        _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    }
    for (size_t i = n4; i < n; ++i) x[i] *= a;
}

void k_add(size_t n, const double* x, const double* y, double* out) {
    const size_t n4 = n & ~size_t(3);
    for (size_t i = 0; i < n4; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (size_t i = n4; i < n; ++i) out[i] = x[i] + y[i];
}

void k_mul(size_t n, const double* x, const double* y, double* out) {
    const size_t n4 = n & ~size_t(3);
    for (size_t i = 0; i < n4; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (size_t i = n4; i < n; ++i) out[i] = x[i] * y[i];
}

double k_sum(size_t n, const double* x) {
    const size_t n8 = n & ~size_t(7);
    __m256d acc_a = _mm256_setzero_pd();
    __m256d acc_b = _mm256_setzero_pd();
    for (size_t i = 0; i < n8; i += 8) {
        acc_a = _mm256_add_pd(acc_a, _mm256_loadu_pd(x + i));
        acc_b = _mm256_add_pd(acc_b, _mm256_loadu_pd(x + i + 4));
    }
    double r = reduce_tree(acc_a, acc_b);
    for (size_t i = n8; i < n; ++i) r += x[i];
    return r;
}

double k_max(size_t n, const double* x) {
    const double ninf = -std::numeric_limits<double>::infinity();
    const size_t n8 = n & ~size_t(7);
    __m256d acc_a = _mm256_set1_pd(ninf);
    __m256d acc_b = _mm256_set1_pd(ninf);
    for (size_t i = 0; i < n8; i += 8) {
        acc_a = _mm256_max_pd(acc_a, _mm256_loadu_pd(x + i));
        acc_b = _mm256_max_pd(acc_b, _mm256_loadu_pd(x + i + 4));
    }
    __m256d t = _mm256_max_pd(acc_a, acc_b);
    __m128d lo = _mm256_castpd256_pd128(t);
    __m128d hi = _mm256_extractf128_pd(t, 1);
    __m128d u = _mm_max_pd(lo, hi);
    double r = std::max(_mm_cvtsd_f64(u), _mm_cvtsd_f64(_mm_unpackhi_pd(u, u)));
    for (size_t i = n8; i < n; ++i) r = std::max(r, x[i]);
    return r;
}

const KernelOps g_avx2 = {"avx2", k_dot, k_axpy, k_scale, k_add, k_mul, k_sum, k_max};

} // namespace

const KernelOps* avx2_ops() {
    return __builtin_cpu_supports("avx2") ? &g_avx2 : nullptr;
}

} // namespace mrgr::kern

#else

namespace mrgr::kern {
const KernelOps* avx2_ops() { return nullptr; }
} // namespace mrgr::kern

#endif
