#include "patchspn/distance.hpp"

#include <algorithm>
#include <limits>
#include <vector>

#include "patchspn/errors.hpp"

namespace patchspn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D squared distance transform via the lower envelope of parabolas.
// Cells with f == inf contribute no parabola.
void transform_1d(const double* f, double* d, std::size_t n, std::vector<int>& v,
                  std::vector<double>& z) {
    v.resize(n);
    z.resize(n + 1);
    int k = -1;
    for (int q = 0; q < static_cast<int>(n); ++q) {
        if (f[q] == kInf) continue;
        double s = 0.0;
        while (k >= 0) {
            const int p = v[k];
            s = ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) /
                (2.0 * (q - p));
            if (s > z[k]) break;
            --k;
        }
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -kInf;
        } else {
            ++k;
            v[k] = q;
            z[k] = s;
        }
        z[k + 1] = kInf;
    }
    if (k < 0) {
        for (std::size_t q = 0; q < n; ++q) d[q] = kInf;
        return;
    }
    k = 0;
    for (int q = 0; q < static_cast<int>(n); ++q) {
        while (z[k + 1] < q) ++k;
        const int p = v[k];
        const double dq = q - p;
        d[q] = dq * dq + f[p];
    }
}

}  // namespace

std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& mask, std::size_t h,
                                               std::size_t w) {
    if (mask.size() != h * w) throw ValueError("distance transform: mask size does not match dims");
    std::vector<double> dist(h * w);
    for (std::size_t i = 0; i < mask.size(); ++i) dist[i] = mask[i] ? 0.0 : kInf;

    std::vector<double> col_in(std::max(h, w)), col_out(std::max(h, w));
    std::vector<int> v;
    std::vector<double> z;

    for (std::size_t y = 0; y < h; ++y) {
        transform_1d(dist.data() + y * w, col_out.data(), w, v, z);
        std::copy(col_out.begin(), col_out.begin() + static_cast<std::ptrdiff_t>(w),
                  dist.begin() + static_cast<std::ptrdiff_t>(y * w));
    }
    for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t y = 0; y < h; ++y) col_in[y] = dist[y * w + x];
        transform_1d(col_in.data(), col_out.data(), h, v, z);
        for (std::size_t y = 0; y < h; ++y) dist[y * w + x] = col_out[y];
    }
    return dist;
}

}  // namespace patchspn
