#pragma once

#include <cstddef>
#include <functional>

namespace patchspn {

// Global worker cap. 0 restores the hardware default.
void set_max_threads(int n);
int max_threads();

// Runs fn(begin, end) over a static contiguous partition of [0, n).
// Chunk boundaries depend only on n and the thread cap, and workers must
// write disjoint outputs, so results do not depend on scheduling.
// Nested calls execute serially on the calling worker.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

// Number of chunks parallel_for would use for n items.
std::size_t parallel_chunks(std::size_t n);

}  // namespace patchspn
