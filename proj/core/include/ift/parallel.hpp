#pragma once

#include <cstdint>
#include <functional>

namespace ift {

// Process-wide worker budget for data-parallel kernels. Work is always split
// into a fixed partition by range, so results are bit-identical for any
// thread count; `set_max_threads(1)` additionally forces fully serial
// execution (the CLI's --deterministic contract).
int max_threads();
void set_max_threads(int n);

// Invokes fn(begin, end) on a static partition of [0, n). fn must only write
// to disjoint state per range. Blocks until all ranges complete.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace ift
