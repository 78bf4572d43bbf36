#pragma once

#include <cstddef>
#include <functional>

namespace ccat {

/// Worker count from CCAT_THREADS, falling back to hardware concurrency.
std::size_t thread_count();

/// Runs fn(i) for i in [0, n) across thread_count() workers. Each index is
/// visited exactly once; callers write results into pre-sized slots so the
/// output never depends on scheduling. The first exception thrown by any
/// worker is rethrown on the calling thread. Calls made from inside a worker
/// run serially on that worker.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace ccat
