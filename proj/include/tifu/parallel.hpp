#pragma once

#include <cstddef>
#include <functional>

namespace tifu {

// Process-wide worker cap, set by the CLI --threads flag. 0 means "use
// hardware concurrency". All parallel entry points in the library are
// deterministic for any thread count: work is written to preassigned slots
// and reductions run in a fixed order.
void set_default_threads(int n);
int default_threads();
int resolve_threads(int requested);  // requested <= 0 -> default

// Splits [0, n) into contiguous ranges and runs fn(begin, end) on worker
// threads. fn must only write to disjoint, index-addressed state.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
                  int threads = 0);

// Runs fn(block) for block = 0..n_blocks-1 across workers. Callers that
// reduce must pick n_blocks independent of the thread count and merge the
// per-block results sequentially.
void parallel_blocks(std::size_t n_blocks, const std::function<void(std::size_t)>& fn,
                     int threads = 0);

}  // namespace tifu
