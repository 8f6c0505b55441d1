#pragma once

#include <cstddef>
#include <functional>

namespace cgmot {

/// Worker budget: hardware concurrency, capped by CGMOT_THREADS when it holds
/// a positive integer. Always at least 1.
unsigned thread_budget();

/// Calls body(i) for i in [0, count) on up to thread_budget() threads. Work is
/// split into contiguous blocks; the first exception thrown is rethrown after
/// every worker has stopped. Callers write results into per-index slots, so
/// the outcome does not depend on scheduling.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace cgmot
