#pragma once

#include <cstddef>
#include <functional>

namespace ict {

/// Upper bound on worker threads used by parallel_for. Zero means
/// hardware concurrency.
void set_max_threads(std::size_t n);
std::size_t max_threads();

/// Runs body(i) for i in [0, n). Each index is visited exactly once; callers
/// write results into per-index slots so output never depends on scheduling.
/// The first exception thrown by any body is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace ict
