#pragma once

#include <cstddef>
#include <functional>

namespace msn {

/// Worker cap for parallel_for; 0 restores the hardware default.
void set_max_threads(std::size_t n);
std::size_t max_threads();

/// Calls fn(i) for i in [0, n) on up to max_threads() workers. Callers write
/// results by index, so output order never depends on scheduling. The first
/// exception (lowest index) is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace msn
