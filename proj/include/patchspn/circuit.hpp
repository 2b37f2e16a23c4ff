#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "patchspn/region_graph.hpp"
#include "patchspn/rng.hpp"
#include "patchspn/tensor.hpp"

namespace patchspn {

enum class NodeKind { sum, product, leaf };

struct CircuitNode {
    NodeKind kind = NodeKind::leaf;
    std::vector<std::size_t> children;    // indices of earlier nodes
    std::vector<double> log_weights;      // sum nodes, aligned with children
    std::size_t var = 0;                  // leaf nodes
    double mean = 0.0;
    double variance = 1.0;                // >= kVarianceFloor
    std::vector<std::size_t> scope;       // sorted variable subset
};

// Smooth, decomposable sum-product DAG stored in topological order
// (children strictly before parents). Roots are combined as a uniform
// mixture when scoring.
struct Circuit {
    static constexpr double kVarianceFloor = 1e-4;

    std::size_t n_vars = 0;
    std::vector<CircuitNode> nodes;
    std::vector<std::size_t> roots;

    // z-scoring transform for incoming features (identity by default).
    std::vector<double> standardize_mean, standardize_std;

    // Construction parameters; enough to rebuild the structure exactly.
    std::size_t graph_depth = 0, replicas = 1, n_roots = 1, sums_per_region = 1, inputs_per_leaf = 1;
    std::uint64_t graph_seed = 0, weight_seed = 0;

    std::vector<double> standardized(std::span<const double> row) const;
    void set_standardization(std::vector<double> mean, std::vector<double> stddev);
};

// Materializes the RAT-SPN implied by a region graph: leaf regions carry
// `inputs` factorized-Gaussian input distributions, internal regions `sums`
// sum nodes, the root region `roots` sum nodes; every partition contributes
// all cross-products of its child-region nodes, and each region's sum nodes
// connect to every product of that region's partitions. Sum weights are
// seeded random-uniform, then normalized.
Circuit materialize(const RegionGraph& rg, std::size_t roots, std::size_t sums, std::size_t inputs,
                    std::uint64_t weight_seed);

struct ValidationIssue {
    std::size_t node = 0;
    std::string what;
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;
    bool ok() const { return issues.empty(); }
    std::string str() const;
};

// Checks acyclicity, smoothness, decomposability, weight normalization,
// root scope completeness, and leaf variance floors. Violations are report
// entries, never exceptions.
ValidationReport validate_structure(const Circuit& c);

// Exact log density of one standardless feature row (the circuit's own input
// space). Multiple roots average in probability domain.
double log_likelihood_one(const Circuit& c, std::span<const double> z);

// Batch version over an n x n_vars tensor; parallel across rows.
std::vector<double> log_likelihood(const Circuit& c, const Tensor& batch);

struct Evidence {
    std::vector<double> values;
    std::vector<bool> observed;

    static Evidence all_marginalized(std::size_t n_vars);
    void observe(std::size_t var, double value);
};

// Exact marginal: leaves over marginalized variables contribute log 1 = 0.
double marginal_log_likelihood(const Circuit& c, const Evidence& evidence);

// Ancestral sampling; returns n x n_vars.
Tensor sample(const Circuit& c, Rng& rng, std::size_t n);

// Analytic per-variable mean of the circuit density (weight-propagated leaf
// means), used by the sampling moment checks.
std::vector<double> analytic_mean(const Circuit& c);

void save_circuit(const std::filesystem::path& path, const Circuit& c);
Circuit load_circuit(const std::filesystem::path& path);

}  // namespace patchspn
