#pragma once

#include <cstddef>
#include <functional>

namespace porenet {

/// Worker count: PORENET_THREADS if set and positive, else hardware concurrency (at least 1).
int worker_count();

/// Runs fn(i) for i in [0, n) across up to worker_count() threads. The first exception thrown
/// by any task is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace porenet
