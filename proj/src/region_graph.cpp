#include "patchspn/region_graph.hpp"

#include <algorithm>
#include <numeric>

#include "patchspn/errors.hpp"
#include "patchspn/rng.hpp"

namespace patchspn {

std::vector<std::size_t> RegionGraph::leaf_regions() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < regions.size(); ++i) {
        if (regions[i].depth == depth) out.push_back(i);
    }
    return out;
}

namespace {

void split_region(RegionGraph& rg, std::size_t region_idx, Rng& rng) {
    const Region& region = rg.regions[region_idx];
    if (region.depth == rg.depth) return;

    std::vector<std::size_t> scope = region.scope;
    for (std::size_t i = scope.size(); i > 1; --i) {
        std::swap(scope[i - 1], scope[rng.uniform_index(i)]);
    }
    const std::size_t half = (scope.size() + 1) / 2;
    std::vector<std::size_t> left(scope.begin(), scope.begin() + half);
    std::vector<std::size_t> right(scope.begin() + half, scope.end());
    std::sort(left.begin(), left.end());
    std::sort(right.begin(), right.end());

    const std::size_t depth = region.depth + 1;
    const std::size_t left_idx = rg.regions.size();
    rg.regions.push_back({std::move(left), depth, {}});
    const std::size_t right_idx = rg.regions.size();
    rg.regions.push_back({std::move(right), depth, {}});

    const std::size_t part_idx = rg.partitions.size();
    rg.partitions.push_back({region_idx, {left_idx, right_idx}});
    rg.regions[region_idx].partitions.push_back(part_idx);

    split_region(rg, left_idx, rng);
    split_region(rg, right_idx, rng);
}

}  // namespace

RegionGraph build_region_graph(std::size_t n_vars, std::size_t depth, std::size_t replicas,
                               std::uint64_t seed) {
    if (n_vars == 0) throw ValueError("region graph needs at least one variable");
    if (replicas == 0) throw ValueError("region graph needs at least one replica");
    if (depth > 63 || (std::size_t{1} << depth) > n_vars) {
        throw ValueError("region graph depth " + std::to_string(depth) + " too large for " +
                         std::to_string(n_vars) + " variables (need 2^depth <= n_vars)");
    }

    RegionGraph rg;
    rg.n_vars = n_vars;
    rg.depth = depth;
    rg.replicas = replicas;
    rg.seed = seed;

    std::vector<std::size_t> full(n_vars);
    std::iota(full.begin(), full.end(), 0);
    rg.regions.push_back({std::move(full), 0, {}});

    if (depth == 0) return rg;

    Rng rng(seed);
    for (std::size_t r = 0; r < replicas; ++r) split_region(rg, 0, rng);
    return rg;
}

}  // namespace patchspn
