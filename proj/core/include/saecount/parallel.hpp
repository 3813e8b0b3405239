#pragma once

#include <functional>

namespace saecount {

// Runs body(i) for i in [0, n) on up to `threads` workers with static
// partitioning. Results must be written to per-index slots; any reduction
// happens after the call, in index order, so thread count never changes
// output. The first exception thrown by a body is rethrown on the caller.
void parallel_for(int n, int threads, const std::function<void(int)>& body);

}  // namespace saecount
