#pragma once

#include <cstdint>
#include <vector>

namespace patchspn {

// Exact squared Euclidean distance transform (Felzenszwalb-Huttenlocher):
// per pixel, the minimum squared distance to a set pixel of `mask`.
// An empty mask yields +infinity everywhere.
std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& mask, std::size_t h,
                                               std::size_t w);

}  // namespace patchspn
