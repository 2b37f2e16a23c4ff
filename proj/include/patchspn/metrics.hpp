#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "patchspn/image.hpp"

namespace patchspn {

// One image's anomaly scores with aligned ground-truth labels, restricted to
// valid tissue positions.
struct ScoredPixelSet {
    std::string image_id;
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;  // 0 = healthy, 1 = anomalous
};

// Rank-statistic AUC (Mann-Whitney): probability that a random positive
// outscores a random negative, ties counting one half.
double auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

// Single AUC over the concatenation of every image's positions.
double pixelwise_auc(const std::vector<ScoredPixelSet>& sets);

struct ImagewiseAuc {
    double mean = 0.0, stddev = 0.0;
    std::size_t used = 0, skipped_single_class = 0;
};

// Mean and population std of per-image AUCs; single-class images are skipped
// and counted.
ImagewiseAuc imagewise_auc(const std::vector<ScoredPixelSet>& sets);

// Symmetric Hausdorff distance in pixels, exact via distance transforms.
// Throws ValueError on an empty mask (callers substitute the image diagonal).
double hausdorff(const BinaryMask& a, const BinaryMask& b);

// Difference of class medians in units of the pooled interquartile range.
double score_gap_statistic(std::span<const double> healthy, std::span<const double> anomalous);

// Shared-range equal-width histogram CSV:
// bin_left,bin_right,healthy_count,anomalous_count. Returns the gap statistic.
double export_score_histograms(const std::filesystem::path& csv_path, std::span<const double> healthy,
                               std::span<const double> anomalous, std::size_t bins);

struct PerImageMetrics {
    std::string image_id;
    double auc_value = 0.0;
    bool auc_defined = false;
    double hausdorff_px = 0.0;
    bool hausdorff_defined = false;
    bool hausdorff_fallback = false;  // empty prediction replaced by the image diagonal
    std::size_t n_pos = 0, n_neg = 0;
};

struct MetricsReport {
    double pixelwise = 0.0;
    ImagewiseAuc imagewise;
    double hausdorff_mean = 0.0, hausdorff_std = 0.0;
    std::size_t hausdorff_images = 0;
    double gap_statistic = 0.0;
    std::vector<PerImageMetrics> per_image;
};

// metrics.txt (structured text) + per_image.csv in `dir`.
void write_metrics_report(const std::filesystem::path& dir, const MetricsReport& report);

}  // namespace patchspn
