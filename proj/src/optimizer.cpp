#include "patchspn/optimizer.hpp"

#include <cmath>

#include "patchspn/errors.hpp"

namespace patchspn {

AdamOptimizer::AdamOptimizer(AdamConfig cfg, std::vector<ParamRef> params)
    : cfg_(cfg), params_(std::move(params)) {
    if (!(cfg_.lr > 0.0)) throw ValueError("adam: learning rate must be > 0");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p.value->shape());
        v_.emplace_back(p.value->shape());
    }
}

void AdamOptimizer::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t j = 0; j < params_.size(); ++j) {
        Tensor& p = *params_[j].value;
        const Tensor& g = *params_[j].grad;
        Tensor& m = m_[j];
        Tensor& v = v_[j];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i];
            if (!std::isfinite(gi)) {
                throw NumericalError("non-finite gradient in parameter '" + params_[j].name +
                                     "' at entry " + std::to_string(i));
            }
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
        }
    }
}

}  // namespace patchspn
