#pragma once

#include <cstddef>
#include <functional>
#include <utility>

namespace mripet {

/// Caps worker threads used by metric, resampling and phantom loops.
/// Values < 1 select the hardware concurrency.
void set_num_threads(int n);
int num_threads();

/// Runs fn(chunk) for chunk in [0, n_chunks). Chunks are distributed over
/// workers, so fn must only write chunk-private state. Results that are
/// merged in chunk order afterwards do not depend on the thread count.
void parallel_chunks(std::size_t n_chunks,
                     const std::function<void(std::size_t)> &fn);

/// Splits [0, n) into `n_chunks` contiguous ranges; returns [begin, end).
inline std::pair<std::size_t, std::size_t>
chunk_range(std::size_t n, std::size_t n_chunks, std::size_t chunk) {
  return {n * chunk / n_chunks, n * (chunk + 1) / n_chunks};
}

}  // namespace mripet
