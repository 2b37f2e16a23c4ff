#pragma once

// Independent reference implementations used as test oracles. Everything in
// this header is deliberately naive (direct sums, exhaustive scans,
// linear-domain recursion) and stays independent of the library's own
// computation paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "patchspn/circuit.hpp"
#include "patchspn/tensor.hpp"

namespace oracles {

using patchspn::Circuit;
using patchspn::CircuitNode;
using patchspn::NodeKind;
using patchspn::Tensor;

// Direct O(n^2 k^2) convolution, single image pair of channel planes summed.
inline Tensor naive_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
                           std::size_t pad) {
    const std::size_t n = x.dim(0), in_ch = x.dim(1), h = x.dim(2), ww = x.dim(3);
    const std::size_t out_ch = w.dim(0), k = w.dim(2);
    const std::size_t oh = (h + 2 * pad - k) / stride + 1;
    const std::size_t ow = (ww + 2 * pad - k) / stride + 1;
    Tensor out({n, out_ch, oh, ow});
    for (std::size_t img = 0; img < n; ++img)
        for (std::size_t oc = 0; oc < out_ch; ++oc)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    double acc = b[oc];
                    for (std::size_t ic = 0; ic < in_ch; ++ic)
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                                          static_cast<std::ptrdiff_t>(pad);
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                          static_cast<std::ptrdiff_t>(pad);
                                if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) ||
                                    ix >= static_cast<std::ptrdiff_t>(ww))
                                    continue;
                                acc += w[((oc * in_ch + ic) * k + ky) * k + kx] *
                                       x[((img * in_ch + ic) * h + iy) * ww + ix];
                            }
                    out[((img * out_ch + oc) * oh + oy) * ow + ox] = acc;
                }
    return out;
}

// Central finite difference of f at *slot.
inline double central_difference(const std::function<double()>& f, double* slot, double eps) {
    const double saved = *slot;
    *slot = saved + eps;
    const double hi = f();
    *slot = saved - eps;
    const double lo = f();
    *slot = saved;
    return (hi - lo) / (2.0 * eps);
}

inline double rel_err(double a, double b) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-12});
}

// Linear-domain recursive circuit evaluation in extended precision.
inline long double linear_value(const Circuit& c, std::size_t node, const std::vector<double>& z) {
    const CircuitNode& nd = c.nodes[node];
    switch (nd.kind) {
        case NodeKind::leaf: {
            const long double d = static_cast<long double>(z[nd.var]) - nd.mean;
            const long double v = nd.variance;
            return std::exp(-d * d / (2.0L * v)) / std::sqrt(2.0L * 3.14159265358979323846264338328L * v);
        }
        case NodeKind::product: {
            long double prod = 1.0L;
            for (const std::size_t ch : nd.children) prod *= linear_value(c, ch, z);
            return prod;
        }
        case NodeKind::sum: {
            long double acc = 0.0L;
            for (std::size_t k = 0; k < nd.children.size(); ++k) {
                acc += std::exp(static_cast<long double>(nd.log_weights[k])) *
                       linear_value(c, nd.children[k], z);
            }
            return acc;
        }
    }
    return 0.0L;
}

inline long double linear_density(const Circuit& c, const std::vector<double>& z) {
    long double acc = 0.0L;
    for (const std::size_t r : c.roots) acc += linear_value(c, r, z);
    return acc / static_cast<long double>(c.roots.size());
}

// Adaptive Simpson quadrature with recursion on interval halves.
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double fa,
                               double fb, double fm, double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if (depth <= 0 || std::fabs(left + right - whole) <= 15.0 * tol) {
        return left + right + (left + right - whole) / 15.0;
    }
    return adaptive_simpson(f, a, m, fa, fm, flm, left, tol / 2.0, depth - 1) +
           adaptive_simpson(f, m, b, fm, fb, frm, right, tol / 2.0, depth - 1);
}

inline double integrate(const std::function<double(double)>& f, double a, double b, double tol) {
    const double m = 0.5 * (a + b);
    const double fa = f(a), fb = f(b), fm = f(m);
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return adaptive_simpson(f, a, b, fa, fb, fm, whole, tol, 48);
}

// Textbook diagonal-Gaussian mixture EM (full batch).
struct GmmModel {
    std::vector<double> weights;                 // K
    std::vector<std::vector<double>> means;      // K x D
    std::vector<std::vector<double>> variances;  // K x D
};

inline double gmm_log_pdf(const GmmModel& m, const double* x, std::size_t d) {
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(m.weights.size());
    for (std::size_t k = 0; k < m.weights.size(); ++k) {
        double lp = std::log(m.weights[k]);
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = x[j] - m.means[k][j];
            lp += -0.5 * (std::log(2.0 * M_PI * m.variances[k][j]) + diff * diff / m.variances[k][j]);
        }
        terms[k] = lp;
        best = std::max(best, lp);
    }
    double acc = 0.0;
    for (const double t : terms) acc += std::exp(t - best);
    return best + std::log(acc);
}

// One full-batch EM iteration with the same conventions the library
// documents: biased variances, variance floor, 1e-8 smoothing on the leaf
// denominators, candidate weights = expected counts / N.
inline void gmm_em_iteration(GmmModel& m, const Tensor& data, double variance_floor) {
    const std::size_t n = data.dim(0), d = data.dim(1), kk = m.weights.size();
    std::vector<std::vector<double>> resp(n, std::vector<double>(kk));
    for (std::size_t i = 0; i < n; ++i) {
        const double* x = data.data() + i * d;
        std::vector<double> lp(kk);
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < kk; ++k) {
            lp[k] = std::log(m.weights[k]);
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = x[j] - m.means[k][j];
                lp[k] += -0.5 * (std::log(2.0 * M_PI * m.variances[k][j]) + diff * diff / m.variances[k][j]);
            }
            best = std::max(best, lp[k]);
        }
        double z = 0.0;
        for (std::size_t k = 0; k < kk; ++k) z += std::exp(lp[k] - best);
        for (std::size_t k = 0; k < kk; ++k) resp[i][k] = std::exp(lp[k] - best) / z;
    }
    for (std::size_t k = 0; k < kk; ++k) {
        double rk = 0.0;
        for (std::size_t i = 0; i < n; ++i) rk += resp[i][k];
        m.weights[k] = rk / static_cast<double>(n);
        const double denom = rk + 1e-8;
        for (std::size_t j = 0; j < d; ++j) {
            double sx = 0.0, sxx = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double x = data[i * d + j];
                sx += resp[i][k] * x;
                sxx += resp[i][k] * x * x;
            }
            const double mean = sx / denom;
            m.means[k][j] = mean;
            m.variances[k][j] = std::max(sxx / denom - mean * mean, variance_floor);
        }
    }
    double wsum = 0.0;
    for (const double w : m.weights) wsum += w;
    for (auto& w : m.weights) w /= wsum;
}

// Pair-counting AUC: wins + half-ties over all positive/negative pairs.
inline double pair_counting_auc(const std::vector<double>& scores,
                                const std::vector<std::uint8_t>& labels) {
    double num = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) continue;
        ++n_pos;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j]) continue;
            if (scores[i] > scores[j]) num += 1.0;
            else if (scores[i] == scores[j]) num += 0.5;
        }
    }
    for (const auto l : labels) n_neg += l ? 0 : 1;
    return num / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// All-pairs Hausdorff on pixel masks.
inline double brute_force_hausdorff(const std::vector<std::uint8_t>& a,
                                    const std::vector<std::uint8_t>& b, std::size_t h, std::size_t w) {
    std::vector<std::pair<double, double>> pa, pb;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            if (a[y * w + x]) pa.emplace_back(y, x);
            if (b[y * w + x]) pb.emplace_back(y, x);
        }
    const auto directed = [](const auto& from, const auto& to) {
        double worst = 0.0;
        for (const auto& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : to) {
                const double dy = p.first - q.first, dx = p.second - q.second;
                best = std::min(best, dy * dy + dx * dx);
            }
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::sqrt(std::max(directed(pa, pb), directed(pb, pa)));
}

}  // namespace oracles
