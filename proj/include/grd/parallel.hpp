#pragma once

#include <cstddef>
#include <functional>

namespace grd {

/// Worker count: GRD_CATE_THREADS if set and positive, else the hardware
/// concurrency (at least 1).
int worker_count();

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Exceptions from
/// fn are rethrown (the first one) after all workers finish.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace grd
