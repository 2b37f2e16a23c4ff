#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

namespace patchspn {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(exp(a) + exp(b)) without overflow.
inline double log_add_exp(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    if (a < b) std::swap(a, b);
    return a + std::log1p(std::exp(b - a));
}

// log(sum_i exp(xs[i])); -inf for an empty or all -inf input.
inline double log_sum_exp(std::span<const double> xs) {
    if (xs.empty()) return kNegInf;
    const double m = *std::max_element(xs.begin(), xs.end());
    if (m == kNegInf || std::isinf(m)) return m;
    double sum = 0.0;
    for (const double x : xs) sum += std::exp(x - m);
    return m + std::log(sum);
}

// log N(x | mean, variance) for a scalar Gaussian.
inline double gaussian_log_pdf(double x, double mean, double variance) {
    constexpr double kLogTwoPi = 1.8378770664093454835606594728112;
    const double d = x - mean;
    return -0.5 * (kLogTwoPi + std::log(variance) + d * d / variance);
}

}  // namespace patchspn
