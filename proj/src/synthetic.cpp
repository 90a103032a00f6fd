#include "mrgr/synthetic.hpp"

#include <algorithm>
#include <cstdio>

#include "mrgr/errors.hpp"
#include "mrgr/hashing.hpp"
#include "mrgr/rng.hpp"
#include "mrgr/threading.hpp"

namespace mrgr {

void SyntheticConfig::validate(int64_t short_window) const {
    if (n_users < 1) throw UsageError("synthetic: n_users must be >= 1");
    if (n_item_pairs < 1) throw UsageError("synthetic: n_item_pairs must be >= 1");
    if (n_item_pairs > 1000 || n_fillers > 1000 || n_users > 10000000)
        throw UsageError("synthetic: size exceeds the %03d/%04d id naming scheme");
    if (n_fillers < 2) throw UsageError("synthetic: n_fillers must be >= 2");
    if (anchor_lo < 1 || anchor_hi < anchor_lo)
        throw UsageError("synthetic: anchor range must satisfy 1 <= anchor_lo <= anchor_hi");
    if (!(p_long >= 0.0 && p_long <= 1.0)) throw UsageError("synthetic: p_long must be in [0,1]");
    if (seq_len <= short_window + anchor_hi)
        throw UsageError("synthetic: seq_len must exceed short_window + anchor_hi (got " +
                         std::to_string(seq_len) + " <= " + std::to_string(short_window) + " + " +
                         std::to_string(anchor_hi) + ")");
    if (seq_len - 1 > 218)
        throw UsageError("synthetic: seq_len too large for the day-grid train interval");
}

static std::string fmt_id(char prefix, const char* fmt, int64_t idx) {
    char buf[16];
    std::snprintf(buf, sizeof buf, fmt, static_cast<long long>(idx));
    return std::string(1, prefix) + buf;
}

std::string synth_anchor_item(int64_t pair) { return fmt_id('a', "%03lld", pair); }
std::string synth_partner_item(int64_t pair) { return fmt_id('b', "%03lld", pair); }
std::string synth_filler_item(int64_t idx) { return fmt_id('f', "%03lld", idx); }
std::string synth_user_id(int64_t idx) { return fmt_id('u', "%04lld", idx); }

namespace {

constexpr int kMarkovFanout = 8;
const uint64_t kUserTag = fnv1a64(std::string("synth_user"));
const uint64_t kMarkovTag = fnv1a64(std::string("synth_markov"));

// Shared chain structure: every filler state gets a fixed successor set drawn
// once from the global seed; per-user walks then pick among successors with
// the user's own rng.
std::vector<int64_t> build_markov_successors(const SyntheticConfig& cfg) {
    Rng rng(derive_seed(cfg.seed, kMarkovTag));
    std::vector<int64_t> succ(static_cast<size_t>(cfg.n_fillers) * kMarkovFanout);
    for (auto& s : succ) s = static_cast<int64_t>(rng.below(static_cast<uint64_t>(cfg.n_fillers)));
    return succ;
}

struct UserDraws {
    int64_t pair = 0;
    int64_t anchor_pos = 0;
    int64_t final_day = 0;
    int64_t sec = 0;
};

} // namespace

int64_t synth_pair_of_user(const SyntheticConfig& cfg, int64_t user_idx) {
    Rng rng(derive_seed(cfg.seed, kUserTag, static_cast<uint64_t>(user_idx)));
    return static_cast<int64_t>(rng.below(static_cast<uint64_t>(cfg.n_item_pairs)));
}

std::vector<InteractionEvent> generate_synthetic(const SyntheticConfig& cfg, int64_t short_window,
                                                 int workers) {
    cfg.validate(short_window);
    const std::vector<int64_t> succ = build_markov_successors(cfg);

    const int64_t n = cfg.seq_len;
    const int64_t train_day_lo = std::max<int64_t>(59, n - 1);
    std::vector<InteractionEvent> events(static_cast<size_t>(cfg.n_users * n));

    parallel_chunks(static_cast<size_t>(cfg.n_users), 64, workers, [&](size_t lo, size_t hi) {
        for (size_t u = lo; u < hi; ++u) {
            Rng rng(derive_seed(cfg.seed, kUserTag, static_cast<uint64_t>(u)));
            UserDraws d;
            d.pair = static_cast<int64_t>(rng.below(static_cast<uint64_t>(cfg.n_item_pairs)));
            d.anchor_pos =
                cfg.anchor_lo +
                static_cast<int64_t>(rng.below(static_cast<uint64_t>(cfg.anchor_hi - cfg.anchor_lo + 1)));
            const double r = rng.uniform();
            int64_t day_lo, day_hi;
            if (r < 0.6) {
                day_lo = train_day_lo, day_hi = 218;
            } else if (r < 0.8) {
                day_lo = 219, day_hi = 291;
            } else {
                day_lo = 292, day_hi = 364;
            }
            d.final_day = day_lo + static_cast<int64_t>(
                                       rng.below(static_cast<uint64_t>(day_hi - day_lo + 1)));
            d.sec = 1 + static_cast<int64_t>(rng.below(86398));

            const std::string user = synth_user_id(static_cast<int64_t>(u));
            int64_t state = static_cast<int64_t>(rng.below(static_cast<uint64_t>(cfg.n_fillers)));
            for (int64_t i = 1; i <= n; ++i) {
                std::string item;
                if (i == d.anchor_pos) {
                    item = synth_anchor_item(d.pair);
                } else if (i == n && rng.uniform() < cfg.p_long) {
                    item = synth_partner_item(d.pair);
                } else {
                    state = succ[static_cast<size_t>(state) * kMarkovFanout +
                                 rng.below(kMarkovFanout)];
                    item = synth_filler_item(state);
                }
                InteractionEvent& ev = events[u * static_cast<size_t>(n) +
                                              static_cast<size_t>(i - 1)];
                ev.user = user;
                ev.item = std::move(item);
                ev.ts = (d.final_day - (n - i)) * SYNTH_SECONDS_PER_DAY + d.sec;
            }
        }
    });
    return events;
}

} // namespace mrgr
