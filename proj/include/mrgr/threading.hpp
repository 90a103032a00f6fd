#pragma once

#include <cstddef>
#include <functional>

namespace mrgr {

int default_workers();

// Run fn(lo, hi) over fixed-size chunks of [0, n). Chunk boundaries depend
// only on n and chunk_size — never on the worker count — so any per-chunk
// state folded back in chunk-index order gives identical results for any
// number of workers. workers <= 1 runs serially on the calling thread.
void parallel_chunks(size_t n, size_t chunk_size, int workers,
                     const std::function<void(size_t, size_t)>& fn);

// Convenience: number of chunks for a given n / chunk_size.
inline size_t chunk_count(size_t n, size_t chunk_size) {
    return chunk_size == 0 ? 0 : (n + chunk_size - 1) / chunk_size;
}

} // namespace mrgr
