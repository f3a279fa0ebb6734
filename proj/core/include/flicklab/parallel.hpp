#pragma once

#include <cstddef>
#include <functional>

namespace flicklab {

// Worker count used by parallel_for: FLICKLAB_THREADS if set, otherwise
// std::thread::hardware_concurrency().
unsigned worker_count();

// Runs body(i) for i in [0, count). Work is split into static index ranges,
// so results written to pre-sized slots are identical for any worker count.
// The first exception thrown by any worker is rethrown on the caller.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace flicklab
