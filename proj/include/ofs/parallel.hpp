#pragma once

#include <cstddef>
#include <functional>

namespace ofs {

// Worker cap for all data-parallel inner loops (CLI --threads). Default 1.
void set_max_threads(int n);
int max_threads();

// Runs fn(begin, end) over a fixed contiguous partition of [0, n).
// The partition depends only on n and the thread cap, so results are
// deterministic whenever chunks write disjoint state.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace ofs
