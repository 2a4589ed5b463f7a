#pragma once

#include <cstddef>
#include <functional>

namespace pataplectic {

/// Worker count from PATAPLECTIC_THREADS (0 or unset = hardware concurrency).
unsigned worker_count();

/// Runs body(i) for i in [0, count) on up to worker_count() threads. Each
/// index is visited exactly once; callers write results into slot i so the
/// outcome does not depend on scheduling. The first exception is rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace pataplectic
