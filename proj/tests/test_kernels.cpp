// Bitwise equivalence of every kernel variant against the scalar reference.
// The contract is exact: same reduction order (8 interleaved accumulators,
// fixed combine tree, sequential tail), no FMA, so results must match to the
// last bit on every size, including the ragged tails around SIMD widths.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "mrgr/errors.hpp"
#include "mrgr/kernels.hpp"
#include "mrgr/rng.hpp"

using namespace mrgr;

namespace {

bool same_bits(double a, double b) {
    uint64_t ua, ub;
    std::memcpy(&ua, &a, 8);
    std::memcpy(&ub, &b, 8);
    return ua == ub;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Sizes straddling every vector width and unroll boundary in play
// (2/4/8-lane SIMD, 8-way accumulators): below, at, and above.
const std::vector<size_t> kSizes = {0,  1,  2,  3,  4,  5,  7,  8,  9,   15,  16,  17,
                                    23, 24, 31, 32, 33, 63, 64, 65, 100, 127, 128, 1000};

std::vector<double> rand_vec(size_t n, uint64_t seed, double spread) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (size_t i = 0; i < n; ++i) {
        // Mix magnitudes so reductions see real cancellation, not just noise
        // around 1.0 — order bugs hide in well-conditioned data.
        const double base = rng.uniform(-1.0, 1.0);
        const double scale = (i % 7 == 3) ? spread : 1.0;
        v[i] = base * scale;
    }
    return v;
}

struct Variant {
    const char* label;
    const kern::KernelOps* ops;
};

std::vector<Variant> simd_variants() {
    std::vector<Variant> out;
    if (kern::avx2_ops()) out.push_back({"avx2", kern::avx2_ops()});
    if (kern::avx512_ops()) out.push_back({"avx512", kern::avx512_ops()});
    if (kern::neon_ops()) out.push_back({"neon", kern::neon_ops()});
    return out;
}

} // namespace

TEST_CASE("scalar reference is always present and active() is one of available()") {
    REQUIRE(kern::scalar_ops() != nullptr);
    CHECK(std::string(kern::scalar_ops()->name) == "scalar");
    const std::vector<std::string> names = kern::available();
    REQUIRE(!names.empty());
    CHECK(names.back() == "scalar"); // scalar last = lowest priority
    bool found = false;
    for (const std::string& n : names)
        if (n == kern::active().name) found = true;
    CHECK(found);
}

TEST_CASE("select() switches variants and rejects unknown names") {
    const std::string before = kern::active().name;
    for (const std::string& n : kern::available()) {
        kern::select(n);
        CHECK(std::string(kern::active().name) == n);
    }
    CHECK_THROWS_AS(kern::select("sse9"), UsageError);
    kern::select("auto");
    // auto = best available = first in the list
    CHECK(std::string(kern::active().name) == kern::available().front());
    kern::select(before);
}

TEST_CASE("every SIMD variant matches scalar bitwise on all ops and sizes") {
    const kern::KernelOps* scalar = kern::scalar_ops();
    const auto variants = simd_variants();
    if (variants.empty()) {
        MESSAGE("no SIMD variant available on this machine; scalar-only build");
        return;
    }
    for (const Variant& v : variants) {
        CAPTURE(v.label);
        for (size_t n : kSizes) {
            CAPTURE(n);
            for (uint64_t seed : {1u, 2u, 3u}) {
                const std::vector<double> x = rand_vec(n, seed, 1e8);
                const std::vector<double> y = rand_vec(n, seed + 100, 1e-8);

                CHECK(same_bits(scalar->dot(n, x.data(), y.data()),
                                v.ops->dot(n, x.data(), y.data())));
                CHECK(same_bits(scalar->sum(n, x.data()), v.ops->sum(n, x.data())));
                CHECK(same_bits(scalar->max(n, x.data()), v.ops->max(n, x.data())));

                std::vector<double> y1 = y, y2 = y;
                scalar->axpy(n, 0.37, x.data(), y1.data());
                v.ops->axpy(n, 0.37, x.data(), y2.data());
                CHECK(same_bits(y1, y2));

                std::vector<double> x1 = x, x2 = x;
                scalar->scale(n, -1.7, x1.data());
                v.ops->scale(n, -1.7, x2.data());
                CHECK(same_bits(x1, x2));

                std::vector<double> o1(n), o2(n);
                scalar->add(n, x.data(), y.data(), o1.data());
                v.ops->add(n, x.data(), y.data(), o2.data());
                CHECK(same_bits(o1, o2));
                scalar->mul(n, x.data(), y.data(), o1.data());
                v.ops->mul(n, x.data(), y.data(), o2.data());
                CHECK(same_bits(o1, o2));
            }
        }
    }
}

TEST_CASE("reduction edge cases: empty, negatives-only max, signed zero") {
    const kern::KernelOps* scalar = kern::scalar_ops();
    CHECK(scalar->sum(0, nullptr) == 0.0);
    CHECK(scalar->dot(0, nullptr, nullptr) == 0.0);
    CHECK(scalar->max(0, nullptr) == -std::numeric_limits<double>::infinity());

    const std::vector<double> neg = {-5.0, -2.5, -9.0, -2.4999, -7.0, -3.0, -8.0, -6.0, -2.5001};
    for (const Variant& v : simd_variants()) {
        CAPTURE(v.label);
        CHECK(same_bits(scalar->max(neg.size(), neg.data()), v.ops->max(neg.size(), neg.data())));
        CHECK(v.ops->max(0, nullptr) == -std::numeric_limits<double>::infinity());
        CHECK(v.ops->sum(0, nullptr) == 0.0);
    }
}

TEST_CASE("canonical reduction order is stable under a documented permutation probe") {
    // dot is NOT commutative in floating point; the contract pins one order.
    // If an implementation silently switched to, say, a strict left-to-right
    // sum, this probe would catch it: we compute the canonical 8-accumulator
    // result by hand and require the kernel to reproduce it exactly.
    const size_t n = 37; // 4 full groups of 8 plus a 5-wide tail
    const std::vector<double> x = rand_vec(n, 42, 1e10);
    const std::vector<double> y = rand_vec(n, 43, 1e-10);

    double s[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    const size_t main = n - n % 8;
    for (size_t i = 0; i < main; i += 8)
        for (size_t k = 0; k < 8; ++k) s[k] += x[i + k] * y[i + k];
    const double t0 = s[0] + s[4], t1 = s[1] + s[5], t2 = s[2] + s[6], t3 = s[3] + s[7];
    const double u0 = t0 + t2, u1 = t1 + t3;
    double expected = u0 + u1;
    for (size_t i = main; i < n; ++i) expected += x[i] * y[i];

    for (const std::string& name : kern::available()) {
        kern::select(name);
        CAPTURE(name);
        CHECK(same_bits(expected, kern::dot(n, x.data(), y.data())));
    }
    kern::select("auto");
}
