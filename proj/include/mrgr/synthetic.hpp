#pragma once

#include <cstdint>
#include <vector>

#include "mrgr/dataset.hpp"

namespace mrgr {

// Synthetic interaction logs with planted long-term structure: each user gets
// an anchor item a_i placed early (destined for memory, never the short
// window) and, with probability p_long, the paired item b_i as the final
// event. The a->b mapping is a fixed bijection, so the target is predictable
// only from the anchor. Everything else is a seeded Markov walk over filler
// items.
struct SyntheticConfig {
    int64_t n_users = 2000;
    int64_t n_item_pairs = 200;
    int64_t n_fillers = 300;
    int64_t seq_len = 60;
    int64_t anchor_lo = 1;  // 1-based position range for the anchor
    int64_t anchor_hi = 20;
    double p_long = 0.7;
    uint64_t seed = 1;

    void validate(int64_t short_window) const;
};

// Timestamps live on a day grid: user u's i-th event (1-based) has
// ts = (final_day - (seq_len - i)) * 86400 + sec_u with a per-user second
// offset in [1, 86398], so timestamps are strictly increasing per user and
// never collide with a split boundary. Final days are drawn so ~60% of users
// end inside the train interval, 20% val, 20% test; the matching global
// boundaries are the constants below.
constexpr int64_t SYNTH_SECONDS_PER_DAY = 86400;
constexpr int64_t SYNTH_T_TRAIN_END = 219 * SYNTH_SECONDS_PER_DAY;
constexpr int64_t SYNTH_T_VAL_END = 292 * SYNTH_SECONDS_PER_DAY;
constexpr int64_t SYNTH_T_TEST_END = 366 * SYNTH_SECONDS_PER_DAY;

// Item naming: anchors "a%03d", partners "b%03d", fillers "f%03d",
// users "u%04d".
std::string synth_anchor_item(int64_t pair);
std::string synth_partner_item(int64_t pair);
std::string synth_filler_item(int64_t idx);
std::string synth_user_id(int64_t idx);

// Deterministic for a given config regardless of worker count: each user's
// events come from an rng seeded only by (config.seed, user index).
std::vector<InteractionEvent> generate_synthetic(const SyntheticConfig& cfg,
                                                 int64_t short_window = 10, int workers = 1);

// The pair index a user was assigned (recomputable from the seed alone, used
// by tests and the oracle bookkeeping).
int64_t synth_pair_of_user(const SyntheticConfig& cfg, int64_t user_idx);

} // namespace mrgr
