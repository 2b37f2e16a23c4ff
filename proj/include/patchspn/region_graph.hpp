#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace patchspn {

// Region node: a scope (sorted subset of variable indices) at a given depth.
struct Region {
    std::vector<std::size_t> scope;
    std::size_t depth = 0;
    std::vector<std::size_t> partitions;  // partitions that split this region
};

// Partition node: splits its parent region's scope into two disjoint child
// region scopes whose union is the parent scope.
struct RegionPartition {
    std::size_t parent = 0;
    std::array<std::size_t, 2> children{0, 0};
};

struct RegionGraph {
    std::size_t n_vars = 0;
    std::size_t depth = 0;
    std::size_t replicas = 0;
    std::uint64_t seed = 0;
    std::vector<Region> regions;  // regions[0] is the shared root
    std::vector<RegionPartition> partitions;

    std::vector<std::size_t> leaf_regions() const;
};

// Random tensorized region graph: for each replica, recursively split every
// region's scope into two random balanced halves (sizes differ by at most 1)
// until the requested depth. The root region is shared across replicas;
// depth 0 yields only the root.
RegionGraph build_region_graph(std::size_t n_vars, std::size_t depth, std::size_t replicas,
                               std::uint64_t seed);

}  // namespace patchspn
