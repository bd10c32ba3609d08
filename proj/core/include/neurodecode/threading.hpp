#pragma once

#include <cstdint>
#include <functional>

namespace neurodecode {

// Maximum worker count for internal parallelism. Resolves to
// min(hardware_concurrency, NEURODECODE_THREADS) with the env var read once.
int thread_budget();

// Runs fn(i) for i in [0, n). Splits the range into contiguous chunks across
// at most thread_budget() workers; falls back to a serial loop for small n or
// a budget of one. Bodies must write disjoint outputs; there is no reduction
// support, so results do not depend on the worker count.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace neurodecode
