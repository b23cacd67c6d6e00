#pragma once

#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace volray {

/// Number of worker threads (VOLRAY_THREADS env var overrides hardware count).
int worker_threads();

/// Runs fn(begin, end) over fixed-size chunks of [0, n), distributing chunks
/// statically over worker threads. Chunk boundaries depend only on n and
/// grain, so any per-chunk results a caller gathers can be reduced in chunk
/// order for thread-count-independent determinism.
void parallel_chunks(std::int64_t n, std::int64_t grain,
                     const std::function<void(std::int64_t, std::int64_t)>& fn);

/// parallel_chunks with one chunk per output slot: fn(chunk_index, begin, end).
void parallel_chunks_indexed(std::int64_t n, std::int64_t grain,
                             const std::function<void(std::size_t, std::int64_t, std::int64_t)>& fn);

/// Number of chunks parallel_chunks_indexed will produce for (n, grain).
inline std::size_t chunk_count(std::int64_t n, std::int64_t grain) {
    return static_cast<std::size_t>((n + grain - 1) / grain);
}

}  // namespace volray
