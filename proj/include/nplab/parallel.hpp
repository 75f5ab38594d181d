#pragma once

#include <cstddef>
#include <functional>

namespace nplab {

/// Worker count: NPLAB_THREADS when set (at least 1), otherwise the hardware
/// concurrency.
std::size_t thread_count();

/// Calls fn(i) for i in [0, n), spread over up to thread_count() threads.
/// Every index runs exactly once; callers write results by index so the
/// outcome does not depend on scheduling. The first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace nplab
