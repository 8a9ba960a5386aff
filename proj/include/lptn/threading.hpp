#pragma once

#include <cstdint>
#include <functional>

namespace lptn {

// Number of worker threads used by kernel-internal parallel loops.
// Initialized from LPTN_THREADS when set, hardware concurrency otherwise.
int num_threads();
void set_num_threads(int n);

// Runs body(lo, hi) over a static partition of [begin, end). Chunks write to
// disjoint outputs in the kernels, so results do not depend on the thread
// count. Calls from inside a worker run inline (no nesting).
void parallel_for(std::int64_t begin, std::int64_t end, std::int64_t grain,
                  const std::function<void(std::int64_t, std::int64_t)>& body);

}  // namespace lptn
