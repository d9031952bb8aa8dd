// Minimal persistent thread pool.
//
// Reproducibility contract: callers may only use parallel_for when every index
// writes to distinct memory and each index's internal reduction order is fixed.
// Under that restriction results are bitwise independent of the worker count.
#pragma once

#include <cstddef>
#include <functional>

namespace avword {

// Worker count: min(hardware_concurrency, AVWORD_THREADS) with AVWORD_THREADS
// read once at first use. Returns at least 1.
std::size_t worker_count();

// Runs fn(i) for i in [0, n). Falls back to the calling thread when n is small
// or the pool has a single worker.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// Chunked variant: fn(begin, end) over disjoint ranges covering [0, n).
void parallel_for_chunked(std::size_t n,
                          const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace avword
