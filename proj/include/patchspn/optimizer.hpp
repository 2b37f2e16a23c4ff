#pragma once

#include <cstddef>
#include <vector>

#include "patchspn/layers.hpp"
#include "patchspn/tensor.hpp"

namespace patchspn {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Bias-corrected adaptive-moment optimizer. Moment buffers mirror the bound
// parameter shapes; the step counter increases strictly.
class AdamOptimizer {
public:
    AdamOptimizer(AdamConfig cfg, std::vector<ParamRef> params);

    // Applies one update from the currently accumulated gradients.
    void step();

    std::size_t step_count() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    std::vector<ParamRef> params_;
    std::vector<Tensor> m_, v_;
    std::size_t t_ = 0;
};

}  // namespace patchspn
