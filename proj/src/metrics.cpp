#include "patchspn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "patchspn/distance.hpp"
#include "patchspn/errors.hpp"

namespace patchspn {

double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) throw ShapeError("auc: scores/labels length mismatch");
    std::size_t n_pos = 0;
    for (const auto l : labels) n_pos += l ? 1 : 0;
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw ValueError("auc requires both classes (got " + std::to_string(n_pos) + " positive, " +
                         std::to_string(n_neg) + " negative)");
    }

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Rank sum of positives with average ranks over tied groups; exact halves.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]]) rank_sum_pos += avg_rank;
        }
        i = j;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    const double u = rank_sum_pos - np * (np + 1.0) / 2.0;
    return u / (np * nn);
}

double pixelwise_auc(const std::vector<ScoredPixelSet>& sets) {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    for (const auto& s : sets) {
        scores.insert(scores.end(), s.scores.begin(), s.scores.end());
        labels.insert(labels.end(), s.labels.begin(), s.labels.end());
    }
    return auc(scores, labels);
}

ImagewiseAuc imagewise_auc(const std::vector<ScoredPixelSet>& sets) {
    ImagewiseAuc out;
    std::vector<double> values;
    for (const auto& s : sets) {
        std::size_t n_pos = 0;
        for (const auto l : s.labels) n_pos += l ? 1 : 0;
        if (n_pos == 0 || n_pos == s.labels.size()) {
            ++out.skipped_single_class;
            continue;
        }
        values.push_back(auc(s.scores, s.labels));
    }
    if (values.empty()) throw ValueError("imagewise_auc: every image is single-class");
    out.used = values.size();
    double mean = 0.0;
    for (const double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (const double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());  // population std
    out.mean = mean;
    out.stddev = std::sqrt(var);
    return out;
}

double hausdorff(const BinaryMask& a, const BinaryMask& b) {
    if (a.h != b.h || a.w != b.w) throw ShapeError("hausdorff: mask dimensions differ");
    if (a.empty_mask() || b.empty_mask()) throw ValueError("hausdorff: empty mask");
    const std::vector<double> dist_to_a = squared_distance_transform(a.m, a.h, a.w);
    const std::vector<double> dist_to_b = squared_distance_transform(b.m, b.h, b.w);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.m.size(); ++i) {
        if (a.m[i]) worst = std::max(worst, dist_to_b[i]);
        if (b.m[i]) worst = std::max(worst, dist_to_a[i]);
    }
    return std::sqrt(worst);
}

namespace {

// Linear-interpolation quantile at position (n-1)*p of the sorted values.
double quantile_sorted(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw ValueError("quantile of an empty set");
    if (sorted.size() == 1) return sorted[0];
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

double score_gap_statistic(std::span<const double> healthy, std::span<const double> anomalous) {
    if (healthy.empty() || anomalous.empty()) {
        throw ValueError("score_gap_statistic: both classes must be nonempty");
    }
    std::vector<double> h(healthy.begin(), healthy.end());
    std::vector<double> a(anomalous.begin(), anomalous.end());
    std::vector<double> pooled = h;
    pooled.insert(pooled.end(), a.begin(), a.end());
    std::sort(h.begin(), h.end());
    std::sort(a.begin(), a.end());
    std::sort(pooled.begin(), pooled.end());
    const double iqr = quantile_sorted(pooled, 0.75) - quantile_sorted(pooled, 0.25);
    const double med_gap = quantile_sorted(a, 0.5) - quantile_sorted(h, 0.5);
    if (iqr <= 0.0) {
        return med_gap == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), med_gap);
    }
    return med_gap / iqr;
}

double export_score_histograms(const std::filesystem::path& csv_path, std::span<const double> healthy,
                               std::span<const double> anomalous, std::size_t bins) {
    if (healthy.empty() || anomalous.empty()) {
        throw ValueError("export_score_histograms: both classes must be nonempty");
    }
    if (bins == 0) throw ValueError("export_score_histograms: bins must be >= 1");
    double lo = healthy[0], hi = healthy[0];
    for (const double v : healthy) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (const double v : anomalous) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const bool degenerate = !(hi > lo);
    const std::size_t n_bins = degenerate ? 1 : bins;
    const double width = degenerate ? 1.0 : (hi - lo) / static_cast<double>(n_bins);

    std::vector<std::size_t> h_count(n_bins, 0), a_count(n_bins, 0);
    const auto bin_of = [&](double v) {
        if (degenerate) return std::size_t{0};
        auto b = static_cast<std::size_t>((v - lo) / width);
        return std::min(b, n_bins - 1);
    };
    for (const double v : healthy) ++h_count[bin_of(v)];
    for (const double v : anomalous) ++a_count[bin_of(v)];

    std::ofstream os(csv_path);
    if (!os) throw IoError("cannot open for writing: " + csv_path.string());
    os << "bin_left,bin_right,healthy_count,anomalous_count\n";
    char buf[64];
    for (std::size_t b = 0; b < n_bins; ++b) {
        std::snprintf(buf, sizeof buf, "%.17g", lo + width * static_cast<double>(b));
        os << buf << ',';
        std::snprintf(buf, sizeof buf, "%.17g", lo + width * static_cast<double>(b + 1));
        os << buf << ',' << h_count[b] << ',' << a_count[b] << '\n';
    }
    return score_gap_statistic(healthy, anomalous);
}

void write_metrics_report(const std::filesystem::path& dir, const MetricsReport& report) {
    std::filesystem::create_directories(dir);
    char buf[64];
    const auto fmt = [&buf](double v) {
        std::snprintf(buf, sizeof buf, "%.10g", v);
        return std::string(buf);
    };
    {
        std::ofstream os(dir / "metrics.txt");
        if (!os) throw IoError("cannot open metrics.txt in " + dir.string());
        os << "METRICS v1\n";
        os << "images=" << report.per_image.size() << "\n";
        os << "pixelwise_auc=" << fmt(report.pixelwise) << "\n";
        os << "imagewise_auc_mean=" << fmt(report.imagewise.mean) << "\n";
        os << "imagewise_auc_std=" << fmt(report.imagewise.stddev) << "\n";
        os << "imagewise_images_used=" << report.imagewise.used << "\n";
        os << "imagewise_images_skipped_single_class=" << report.imagewise.skipped_single_class << "\n";
        os << "hausdorff_mean=" << fmt(report.hausdorff_mean) << "\n";
        os << "hausdorff_std=" << fmt(report.hausdorff_std) << "\n";
        os << "hausdorff_images=" << report.hausdorff_images << "\n";
        os << "gap_statistic=" << fmt(report.gap_statistic) << "\n";
    }
    {
        std::ofstream os(dir / "per_image.csv");
        if (!os) throw IoError("cannot open per_image.csv in " + dir.string());
        os << "image_id,auc,hausdorff,hausdorff_fallback,n_pos,n_neg\n";
        for (const auto& row : report.per_image) {
            os << row.image_id << ',';
            os << (row.auc_defined ? fmt(row.auc_value) : std::string("-")) << ',';
            os << (row.hausdorff_defined ? fmt(row.hausdorff_px) : std::string("-")) << ',';
            os << (row.hausdorff_fallback ? 1 : 0) << ',' << row.n_pos << ',' << row.n_neg << '\n';
        }
    }
}

}  // namespace patchspn
