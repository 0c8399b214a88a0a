#pragma once

#include <cstddef>
#include <functional>

namespace e360 {

// Process-wide execution settings. Deterministic mode (the default) forces a
// single worker so every reduction runs in a fixed order.
void set_deterministic(bool enabled);
bool deterministic();

// Requested worker count; ignored while deterministic mode is on. The value
// is seeded from ELITE360_THREADS on first use.
void set_thread_count(int threads);
int thread_count();
int effective_threads();

// Splits [0, n) into contiguous chunks and runs fn(begin, end) on each.
// Callers must only write to disjoint outputs per index.
void parallel_for(std::ptrdiff_t n,
                  const std::function<void(std::ptrdiff_t, std::ptrdiff_t)>& fn);

}  // namespace e360
