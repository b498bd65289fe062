#pragma once

#include <cstddef>
#include <functional>

namespace splinet {

/// Worker count: SPLINET_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

/// Calls body(i) for i in [0, n) on up to worker_count() threads. Each index is
/// visited exactly once; callers write results into per-index slots.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace splinet
