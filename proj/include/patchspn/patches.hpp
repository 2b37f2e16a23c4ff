#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "patchspn/image.hpp"
#include "patchspn/rng.hpp"
#include "patchspn/tensor.hpp"

namespace patchspn {

enum class PatchRegion { interior, contour };

struct PatchProvenance {
    std::string image_id;
    std::size_t center_row = 0, center_col = 0;
    PatchRegion region = PatchRegion::interior;
};

struct PatchSet {
    Tensor patches;  // n x P x P, intensities in [0, 1]
    std::vector<PatchProvenance> provenance;

    std::size_t count() const { return provenance.size(); }
    void append(PatchSet&& other);
};

// ceil(n/2) centers drawn uniformly from the eroded tissue interior and
// floor(n/2) from the +-`kContourBand` px band around the tissue boundary.
// With reject_anomalous set, windows overlapping the anomaly mask are
// resampled (fails after 1000*n attempts).
constexpr std::size_t kContourBand = 8;

PatchSet extract_patches(const LabeledImage& img, std::size_t n_per_image, std::size_t patch_size,
                         Rng& rng, bool reject_anomalous);

// Subject-level split: no subject appears in both halves.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_subjects(
    const std::vector<std::string>& subject_per_item, double train_frac, std::uint64_t seed);

std::pair<std::vector<DatasetEntry>, std::vector<DatasetEntry>> split_dataset(
    const std::vector<DatasetEntry>& entries, double train_frac, std::uint64_t seed);

// Tensor file (f32) plus a provenance CSV next to it.
void save_patchset(const std::filesystem::path& tensor_path, const PatchSet& set);
PatchSet load_patchset(const std::filesystem::path& tensor_path);

}  // namespace patchspn
