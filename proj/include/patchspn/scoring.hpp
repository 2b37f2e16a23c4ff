#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "patchspn/autoencoder.hpp"
#include "patchspn/circuit.hpp"
#include "patchspn/image.hpp"
#include "patchspn/tensor.hpp"

namespace patchspn {

// Per-image anomaly score grid at stride resolution. Grid cell (i, j) covers
// the patch whose top-left corner is (i*stride, j*stride); its center pixel
// is that corner plus patch_size/2. Invalid cells (center outside tissue)
// carry the minimum valid score.
struct HeatmapResult {
    std::size_t image_h = 0, image_w = 0;
    std::size_t stride = 16, patch_size = 64;
    std::size_t grid_h = 0, grid_w = 0;
    Tensor scores;                     // grid_h x grid_w
    std::vector<std::uint8_t> valid;   // grid_h x grid_w
    BinaryMask segmentation;           // full resolution; empty until thresholded

    std::size_t center_row(std::size_t i) const { return i * stride + patch_size / 2; }
    std::size_t center_col(std::size_t j) const { return j * stride + patch_size / 2; }
    // Nearest grid cell for a full-resolution pixel.
    std::size_t nearest_i(std::size_t y) const;
    std::size_t nearest_j(std::size_t x) const;
    Tensor upsampled() const;          // image_h x image_w, nearest-neighbour fill
    std::vector<double> valid_scores() const;
};

// Scores every stride-aligned patch whose center lies in the tissue mask.
// With a circuit: score = -log_likelihood(circuit, standardize(encode(patch)));
// without: the autoencoder's own anomaly score. Higher = more anomalous.
HeatmapResult score_image(const LabeledImage& img, const AeModel& ae, const Circuit* circuit,
                          std::size_t stride, std::uint64_t score_seed);

// Threshold over the image's own valid scores (nearest-rank percentile);
// cells strictly above are anomalous, upsampled to full resolution into
// hm.segmentation (and returned).
BinaryMask threshold_heatmap(HeatmapResult& hm, double percentile);

void save_heatmap(const std::filesystem::path& dir, const std::string& image_id, const HeatmapResult& hm);
HeatmapResult load_heatmap(const std::filesystem::path& dir, const std::string& image_id);

}  // namespace patchspn
