#pragma once

#include <cstddef>
#include <functional>

namespace harmon {

// Runs fn(0..n-1) on up to `threads` workers (0 = hardware concurrency). Work
// items must be independent; the first exception by index is rethrown.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

int resolve_threads(int requested);

}  // namespace harmon
