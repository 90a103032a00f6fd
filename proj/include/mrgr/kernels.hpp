#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace mrgr::kern {

// Dense f64 primitives behind every hot loop. Several ISA variants exist
// (scalar reference, AVX2, AVX-512, NEON); one is selected at runtime.
//
// All variants are required to be BITWISE identical. Reductions (dot, sum,
// max) follow one canonical order: eight interleaved partial accumulators
// s_k over indices i == k (mod 8), combined by the fixed tree
//     t0=s0+s4 t1=s1+s5 t2=s2+s6 t3=s3+s7; u0=t0+t2 u1=t1+t3; r=u0+u1
// followed by a sequential scalar tail. Elementwise ops are trivially
// order-free. No FMA anywhere: vector code uses explicit mul then add, and
// the build disables contraction, so scalar and SIMD round identically.
struct KernelOps {
    const char* name;
    double (*dot)(size_t n, const double* x, const double* y);
    void (*axpy)(size_t n, double a, const double* x, double* y); // y += a*x
    void (*scale)(size_t n, double a, double* x);                 // x *= a
    void (*add)(size_t n, const double* x, const double* y, double* out);
    void (*mul)(size_t n, const double* x, const double* y, double* out);
    double (*sum)(size_t n, const double* x);
    double (*max)(size_t n, const double* x); // -inf for n == 0
};

// Currently selected implementation. Defaults to the best variant the CPU
// supports; MRGR_KERNELS=<name> in the environment pins the initial choice.
const KernelOps& active();

// Force a variant: "auto", "scalar", "avx2", "avx512", "neon".
// Throws UsageError if the variant is not available on this machine.
void select(const std::string& name);

// Variants usable on this machine, best first ("scalar" is always last).
std::vector<std::string> available();

inline double dot(size_t n, const double* x, const double* y) { return active().dot(n, x, y); }
inline void axpy(size_t n, double a, const double* x, double* y) { active().axpy(n, a, x, y); }
inline void scale(size_t n, double a, double* x) { active().scale(n, a, x); }
inline void add(size_t n, const double* x, const double* y, double* out) { active().add(n, x, y, out); }
inline void mul(size_t n, const double* x, const double* y, double* out) { active().mul(n, x, y, out); }
inline double sum(size_t n, const double* x) { return active().sum(n, x); }
inline double max(size_t n, const double* x) { return active().max(n, x); }

// Accessors for the individual variants; nullptr when the binary was built
// without that variant or the CPU cannot run it. Used by the dispatcher and
// by the equivalence tests.
const KernelOps* scalar_ops();
const KernelOps* avx2_ops();   // nullptr unless x86-64 with AVX2
const KernelOps* avx512_ops(); // nullptr unless x86-64 with AVX-512F
const KernelOps* neon_ops();   // nullptr unless AArch64

} // namespace mrgr::kern
