// Scalar reference kernels. This file defines the canonical semantics: every
// SIMD variant must reproduce these results bit for bit, including the
// 8-accumulator reduction order and the sequential tail.

#include <algorithm>
#include <limits>

#include "mrgr/kernels.hpp"

namespace mrgr::kern {
namespace {

double k_dot(size_t n, const double* x, const double* y) {
    const size_t n8 = n & ~size_t(7);
    double s[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    for (size_t i = 0; i < n8; i += 8) {
        for (int k = 0; k < 8; ++k) s[k] += x[i + k] * y[i + k];
    }
    const double t0 = s[0] + s[4], t1 = s[1] + s[5], t2 = s[2] + s[6], t3 = s[3] + s[7];
    const double u0 = t0 + t2, u1 = t1 + t3;
    double r = u0 + u1;
    for (size_t i = n8; i < n; ++i) r += x[i] * y[i];
    return r;
}

void k_axpy(size_t n, double a, const double* x, double* y) {
    for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void k_scale(size_t n, double a, double* x) {
    for (size_t i = 0; i < n; ++i) x[i] *= a;
}

void k_add(size_t n, const double* x, const double* y, double* out) {
    for (size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

void k_mul(size_t n, const double* x, const double* y, double* out) {
    for (size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

double k_sum(size_t n, const double* x) {
    const size_t n8 = n & ~size_t(7);
    double s[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    for (size_t i = 0; i < n8; i += 8) {
        for (int k = 0; k < 8; ++k) s[k] += x[i + k];
    }
    const double t0 = s[0] + s[4], t1 = s[1] + s[5], t2 = s[2] + s[6], t3 = s[3] + s[7];
    const double u0 = t0 + t2, u1 = t1 + t3;
    double r = u0 + u1;
    for (size_t i = n8; i < n; ++i) r += x[i];
    return r;
}

double k_max(size_t n, const double* x) {
    const double ninf = -std::numeric_limits<double>::infinity();
    const size_t n8 = n & ~size_t(7);
    double s[8] = {ninf, ninf, ninf, ninf, ninf, ninf, ninf, ninf};
    for (size_t i = 0; i < n8; i += 8) {
        for (int k = 0; k < 8; ++k) s[k] = std::max(s[k], x[i + k]);
    }
    const double t0 = std::max(s[0], s[4]), t1 = std::max(s[1], s[5]);
    const double t2 = std::max(s[2], s[6]), t3 = std::max(s[3], s[7]);
    double r = std::max(std::max(t0, t2), std::max(t1, t3));
    for (size_t i = n8; i < n; ++i) r = std::max(r, x[i]);
    return r;
}

const KernelOps g_scalar = {"scalar", k_dot, k_axpy, k_scale, k_add, k_mul, k_sum, k_max};

} // namespace

const KernelOps* scalar_ops() { return &g_scalar; }

} // namespace mrgr::kern
