#pragma once

#include <cstddef>
#include <functional>

namespace nlfk {

/// Worker-count hint shared by all solvers (the CLI's --jobs). Results never
/// depend on it: work is split into fixed index ranges that write disjoint
/// outputs.
void set_worker_count(std::size_t n);
std::size_t worker_count();

/// Runs body(i) for i in [0, n). The first exception thrown by any worker is
/// rethrown on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace nlfk
