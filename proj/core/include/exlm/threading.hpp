#pragma once

#include <cstddef>
#include <functional>

namespace exlm {

// Number of worker threads to use, from EXLM_THREADS (0 or unset = one per
// hardware thread).
int thread_budget();

// Runs fn(i) for i in [0, n). Work is split into contiguous index chunks so
// results indexed by i are independent of the thread count; callers that
// reduce must do so in index order after this returns.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace exlm
