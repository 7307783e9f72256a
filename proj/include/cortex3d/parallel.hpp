#pragma once

#include <cstddef>
#include <functional>

namespace cortex3d {

/// Worker cap used by data-parallel kernels. Defaults to the CORTEX3D_THREADS
/// environment variable when set, else the hardware concurrency. Only speed
/// depends on it; every kernel partitions work so that results are identical
/// for any worker count.
std::size_t max_threads();
void set_max_threads(std::size_t count);

/// Calls body(i) for i in [0, count), spreading contiguous chunks over up to
/// max_threads() workers. Bodies must write disjoint outputs.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace cortex3d
