#pragma once

#include <cstdint>
#include <functional>

namespace issl {

// Global cap on data-parallel helpers. Results are required to be
// independent of this value: parallel_for only splits index ranges whose
// elements are written by exactly one iteration.
void set_num_threads(int n);
int num_threads();

// Runs fn(i) for i in [0, n). Static contiguous partitioning; each index is
// executed exactly once and no two iterations may write the same location.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

// Range variant: fn(begin, end) per chunk, for loops with cheap bodies.
void parallel_for_ranges(std::int64_t n,
                         const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace issl
