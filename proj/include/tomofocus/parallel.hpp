#pragma once

#include <cstddef>
#include <functional>

namespace tomofocus {

// Process-wide worker count; 0 selects std::thread::hardware_concurrency().
void set_thread_count(unsigned n);
unsigned thread_count();

// Splits [0, n) into contiguous chunks, one per worker, and calls
// fn(begin, end) for each. The chunking depends only on n and the worker
// count, and every index is handled by exactly one call, so algorithms whose
// per-index work is order-independent give identical results for any count.
// Calls made from inside a worker run inline on that worker.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace tomofocus
