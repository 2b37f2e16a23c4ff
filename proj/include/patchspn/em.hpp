#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "patchspn/circuit.hpp"
#include "patchspn/tensor.hpp"

namespace patchspn {

// Expected sufficient statistics from one E pass: per sum-edge posterior
// counts, and per leaf the responsibility-weighted sums of x, x^2 and the
// total responsibility.
struct EmAccumulators {
    std::vector<std::vector<double>> edge_counts;  // aligned with node children
    std::vector<double> leaf_sx, leaf_sxx, leaf_sr;
    std::size_t n_samples = 0;

    static EmAccumulators zeros(const Circuit& c);
    void merge(const EmAccumulators& other);
};

enum class EmMode { full_batch, stochastic };

struct EmConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 64;
    double step_size = 1e-4;  // stochastic convex-combination step; full_batch forces 1
    std::uint64_t seed = 1;
    EmMode mode = EmMode::stochastic;
    bool init_from_data = true;
};

// One bottom-up pass plus one top-down posterior pass over the batch.
EmAccumulators e_step(const Circuit& c, const Tensor& batch);

// Per-sample responsibilities (node posterior masses), for tests.
std::vector<double> node_responsibilities(const Circuit& c, std::span<const double> z);

// Candidate parameters from the accumulators blended into the circuit:
// new = (1 - step) * old + step * candidate (probability domain for weights,
// then renormalized; means/variances in natural domain, variances floored).
// Nodes with zero collected responsibility keep their old parameters.
void m_step(Circuit& c, const EmAccumulators& acc, double step_size);

// Leaf means drawn from random training rows, variances set to the
// per-dimension data variance, sum weights uniform-random then normalized.
void init_circuit_from_data(Circuit& c, const Tensor& data, std::uint64_t seed);

struct EmTrace {
    std::vector<double> train_ll;  // entry 0 = before training, then one per epoch
    std::vector<double> val_ll;
};

EmTrace em_fit(Circuit& c, const Tensor& train, const Tensor* val, const EmConfig& cfg);

double mean_log_likelihood(const Circuit& c, const Tensor& data);

void write_em_trace_csv(const std::filesystem::path& path, const EmTrace& trace);

}  // namespace patchspn
