#include "patchspn/evaluate.hpp"

#include <cmath>

#include "patchspn/errors.hpp"

namespace patchspn {

ScoredPixelSet scored_pixels(const HeatmapResult& hm, const BinaryMask& anomaly_mask,
                             const std::string& image_id) {
    ScoredPixelSet set;
    set.image_id = image_id;
    for (std::size_t i = 0; i < hm.grid_h; ++i) {
        for (std::size_t j = 0; j < hm.grid_w; ++j) {
            const std::size_t cell = i * hm.grid_w + j;
            if (!hm.valid[cell]) continue;
            set.scores.push_back(hm.scores[cell]);
            set.labels.push_back(anomaly_mask.at(hm.center_row(i), hm.center_col(j)) ? 1 : 0);
        }
    }
    if (set.scores.empty()) {
        throw ValueError("image " + image_id + " contributes no valid scored positions");
    }
    return set;
}

EvaluationResult evaluate_scored_images(std::vector<HeatmapResult>& heatmaps,
                                        const std::vector<LabeledImage>& images, double percentile) {
    if (heatmaps.size() != images.size()) {
        throw ValueError("evaluate: heatmap/image count mismatch");
    }
    if (heatmaps.empty()) throw ValueError("evaluate: nothing to evaluate");

    EvaluationResult out;
    std::vector<ScoredPixelSet> sets;
    std::vector<double> hausdorff_values;

    for (std::size_t i = 0; i < images.size(); ++i) {
        const LabeledImage& img = images[i];
        HeatmapResult& hm = heatmaps[i];
        ScoredPixelSet set = scored_pixels(hm, img.anomaly_mask, img.image_id);

        PerImageMetrics row;
        row.image_id = img.image_id;
        for (std::size_t k = 0; k < set.labels.size(); ++k) {
            if (set.labels[k]) {
                ++row.n_pos;
                out.anomalous_scores.push_back(set.scores[k]);
            } else {
                ++row.n_neg;
                out.healthy_scores.push_back(set.scores[k]);
            }
        }
        if (row.n_pos > 0 && row.n_neg > 0) {
            row.auc_defined = true;
            row.auc_value = auc(set.scores, set.labels);
        }

        const BinaryMask& seg = threshold_heatmap(hm, percentile);
        if (!img.anomaly_mask.empty_mask()) {
            row.hausdorff_defined = true;
            if (seg.empty_mask()) {
                row.hausdorff_fallback = true;
                row.hausdorff_px = std::hypot(static_cast<double>(img.image.h),
                                              static_cast<double>(img.image.w));
            } else {
                row.hausdorff_px = hausdorff(seg, img.anomaly_mask);
            }
            hausdorff_values.push_back(row.hausdorff_px);
        }

        sets.push_back(std::move(set));
        out.report.per_image.push_back(std::move(row));
    }

    out.report.pixelwise = pixelwise_auc(sets);
    out.report.imagewise = imagewise_auc(sets);

    if (!hausdorff_values.empty()) {
        double mean = 0.0;
        for (const double v : hausdorff_values) mean += v;
        mean /= static_cast<double>(hausdorff_values.size());
        double var = 0.0;
        for (const double v : hausdorff_values) var += (v - mean) * (v - mean);
        var /= static_cast<double>(hausdorff_values.size());
        out.report.hausdorff_mean = mean;
        out.report.hausdorff_std = std::sqrt(var);
        out.report.hausdorff_images = hausdorff_values.size();
    }
    if (!out.healthy_scores.empty() && !out.anomalous_scores.empty()) {
        out.report.gap_statistic = score_gap_statistic(out.healthy_scores, out.anomalous_scores);
    }
    return out;
}

}  // namespace patchspn
