#include "mrgr/rng.hpp"

#include <cmath>
#include <numbers>

namespace mrgr {

uint64_t Rng::below(uint64_t n) {
    if (n == 0) return 0;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    // Box-Muller on (0,1] x [0,1).
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
}

uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t base, uint64_t tag) {
    return mix64(mix64(base) ^ mix64(tag + 0x519af802a3f1dc41ULL));
}

uint64_t derive_seed(uint64_t base, uint64_t tag1, uint64_t tag2) {
    return derive_seed(derive_seed(base, tag1), tag2);
}

uint64_t derive_seed(uint64_t base, uint64_t tag1, uint64_t tag2, uint64_t tag3) {
    return derive_seed(derive_seed(base, tag1, tag2), tag3);
}

} // namespace mrgr
