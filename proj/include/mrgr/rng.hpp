#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace mrgr {

// Deterministic RNG used everywhere randomness is needed. All draws go
// through the hand-rolled mappings below (never std::uniform_*_distribution,
// whose output is implementation-defined), so streams are reproducible
// across compilers and platforms.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n) via rejection sampling.
    uint64_t below(uint64_t n);

    int64_t index(int64_t n) { return static_cast<int64_t>(below(static_cast<uint64_t>(n))); }

    // Standard normal via Box-Muller (pair cached).
    double normal();

    // Fisher-Yates via below(), so the permutation stream is as portable as
    // the rest of the draws.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// splitmix64 finalizer; good avalanche, used for seed derivation.
uint64_t mix64(uint64_t x);

// Derive an independent stream seed from a base seed and tags. Used to give
// every (stage, epoch, sample) combination its own stream so results do not
// depend on scheduling or worker count.
uint64_t derive_seed(uint64_t base, uint64_t tag);
uint64_t derive_seed(uint64_t base, uint64_t tag1, uint64_t tag2);
uint64_t derive_seed(uint64_t base, uint64_t tag1, uint64_t tag2, uint64_t tag3);

} // namespace mrgr
