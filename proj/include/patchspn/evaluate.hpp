#pragma once

#include <string>
#include <vector>

#include "patchspn/image.hpp"
#include "patchspn/metrics.hpp"
#include "patchspn/scoring.hpp"

namespace patchspn {

// Valid heatmap cells as (score, label) pairs; a cell is positive iff its
// patch center lies inside the anomaly mask.
ScoredPixelSet scored_pixels(const HeatmapResult& hm, const BinaryMask& anomaly_mask,
                             const std::string& image_id);

struct EvaluationResult {
    MetricsReport report;
    std::vector<double> healthy_scores, anomalous_scores;  // pooled over images
};

// Thresholds every heatmap at `percentile`, then computes pixel-wise AUC,
// image-wise AUC mean/std, full-resolution Hausdorff distances against the
// ground-truth masks (empty predictions fall back to the image diagonal),
// and the pooled score-gap statistic.
EvaluationResult evaluate_scored_images(std::vector<HeatmapResult>& heatmaps,
                                        const std::vector<LabeledImage>& images, double percentile);

}  // namespace patchspn
