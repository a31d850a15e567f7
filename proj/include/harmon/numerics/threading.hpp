#pragma once

#include <cstdint>
#include <functional>

namespace harmon::num {

// Worker-thread cap. Resolution order: explicit set_num_threads() call,
// then the HARMON_THREADS environment variable, then hardware concurrency.
int num_threads();
void set_num_threads(int n);

// Runs fn over [0, n) split into contiguous chunks, one per worker.
// The partition depends only on (n, num_threads()), and each index is
// written by exactly one worker, so results are deterministic.
// Falls back to a plain loop when a single worker suffices.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace harmon::num
