// NEON (AArch64) kernels. Four 2-lane accumulators hold {s0,s1} {s2,s3}
// {s4,s5} {s6,s7}; pairing them as (a0+a2), (a1+a3) reproduces the scalar
// tree's {t0,t1} {t2,t3} exactly, then {u0,u1} and the final lane add.

#include "mrgr/kernels.hpp"

#if defined(__aarch64__)

#include <arm_neon.h>

#include <algorithm>
#include <limits>

namespace mrgr::kern {
namespace {

inline double reduce_tree(float64x2_t a0, float64x2_t a1, float64x2_t a2, float64x2_t a3) {
    float64x2_t t01 = vaddq_f64(a0, a2); // {t0, t1}
    float64x2_t t23 = vaddq_f64(a1, a3); // {t2, t3}
    float64x2_t u = vaddq_f64(t01, t23); // {u0, u1}
    return vgetq_lane_f64(u, 0) + vgetq_lane_f64(u, 1);
}

double k_dot(size_t n, const double* x, const double* y) {
    const size_t n8 = n & ~size_t(7);
    float64x2_t a0 = vdupq_n_f64(0.0), a1 = a0, a2 = a0, a3 = a0;
    for (size_t i = 0; i < n8; i += 8) {
        a0 = vaddq_f64(a0, vmulq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
        a1 = vaddq_f64(a1, vmulq_f64(vld1q_f64(x + i + 2), vld1q_f64(y + i + 2)));
        a2 = vaddq_f64(a2, vmulq_f64(vld1q_f64(x + i + 4), vld1q_f64(y + i + 4)));
        a3 = vaddq_f64(a3, vmulq_f64(vld1q_f64(x + i + 6), vld1q_f64(y + i + 6)));
    }
    double r = reduce_tree(a0, a1, a2, a3);
    for (size_t i = n8; i < n; ++i) r += x[i] * y[i];
    return r;
}

void k_axpy(size_t n, double a, const double* x, double* y) {
    const size_t n2 = n & ~size_t(1);
    const float64x2_t va = vdupq_n_f64(a);
    for (size_t i = 0; i < n2; i += 2) {
        float64x2_t prod = vmulq_f64(va, vld1q_f64(x + i));
        vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), prod));
    }
    for (size_t i = n2; i < n; ++i) y[i] += a * x[i];
}

void k_scale(size_t n, double a, double* x) {
    const size_t n2 = n & ~size_t(1);
    const float64x2_t va = vdupq_n_f64(a);
    for (size_t i = 0; i < n2; i += 2) {
        vst1q_f64(x + i, vmulq_f64(va, vld1q_f64(x + i)));
    }
    for (size_t i = n2; i < n; ++i) x[i] *= a;
}

void k_add(size_t n, const double* x, const double* y, double* out) {
    const size_t n2 = n & ~size_t(1);
    for (size_t i = 0; i < n2; i += 2) {
        vst1q_f64(out + i, vaddq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
    }
    for (size_t i = n2; i < n; ++i) out[i] = x[i] + y[i];
}

void k_mul(size_t n, const double* x, const double* y, double* out) {
    const size_t n2 = n & ~size_t(1);
    for (size_t i = 0; i < n2; i += 2) {
        vst1q_f64(out + i, vmulq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
    }
    for (size_t i = n2; i < n; ++i) out[i] = x[i] * y[i];
}

double k_sum(size_t n, const double* x) {
    const size_t n8 = n & ~size_t(7);
    float64x2_t a0 = vdupq_n_f64(0.0), a1 = a0, a2 = a0, a3 = a0;
    for (size_t i = 0; i < n8; i += 8) {
        a0 = vaddq_f64(a0, vld1q_f64(x + i));
        a1 = vaddq_f64(a1, vld1q_f64(x + i + 2));
        a2 = vaddq_f64(a2, vld1q_f64(x + i + 4));
        a3 = vaddq_f64(a3, vld1q_f64(x + i + 6));
    }
    double r = reduce_tree(a0, a1, a2, a3);
    for (size_t i = n8; i < n; ++i) r += x[i];
    return r;
}

double k_max(size_t n, const double* x) {
    const double ninf = -std::numeric_limits<double>::infinity();
    const size_t n8 = n & ~size_t(7);
    float64x2_t a0 = vdupq_n_f64(ninf), a1 = a0, a2 = a0, a3 = a0;
    for (size_t i = 0; i < n8; i += 8) {
        a0 = vmaxq_f64(a0, vld1q_f64(x + i));
        a1 = vmaxq_f64(a1, vld1q_f64(x + i + 2));
        a2 = vmaxq_f64(a2, vld1q_f64(x + i + 4));
        a3 = vmaxq_f64(a3, vld1q_f64(x + i + 6));
    }
    float64x2_t t01 = vmaxq_f64(a0, a2);
    float64x2_t t23 = vmaxq_f64(a1, a3);
    float64x2_t u = vmaxq_f64(t01, t23);
    double r = std::max(vgetq_lane_f64(u, 0), vgetq_lane_f64(u, 1));
    for (size_t i = n8; i < n; ++i) r = std::max(r, x[i]);
    return r;
}

const KernelOps g_neon = {"neon", k_dot, k_axpy, k_scale, k_add, k_mul, k_sum, k_max};

} // namespace

const KernelOps* neon_ops() { return &g_neon; }

} // namespace mrgr::kern

#else

namespace mrgr::kern {
const KernelOps* neon_ops() { return nullptr; }
} // namespace mrgr::kern

#endif
