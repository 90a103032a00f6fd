#include "mrgr/threading.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mrgr {

int default_workers() {
    unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

void parallel_chunks(size_t n, size_t chunk_size, int workers,
                     const std::function<void(size_t, size_t)>& fn) {
    if (n == 0) return;
    if (chunk_size == 0) chunk_size = 1;
    const size_t n_chunks = chunk_count(n, chunk_size);

    auto run_chunk = [&](size_t c) {
        size_t lo = c * chunk_size;
        size_t hi = std::min(n, lo + chunk_size);
        fn(lo, hi);
    };

    if (workers <= 1 || n_chunks <= 1) {
        for (size_t c = 0; c < n_chunks; ++c) run_chunk(c);
        return;
    }

    std::atomic<size_t> next{0};
    std::exception_ptr first_error;
    std::mutex err_mu;
    auto worker = [&] {
        for (;;) {
            size_t c = next.fetch_add(1);
            if (c >= n_chunks) return;
            try {
                run_chunk(c);
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mu);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };

    size_t n_threads = std::min<size_t>(static_cast<size_t>(workers), n_chunks);
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace mrgr
