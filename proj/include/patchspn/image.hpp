#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace patchspn {

// Grayscale grid with intensities normalized to [0, 1].
struct GrayImage {
    std::size_t h = 0, w = 0;
    std::vector<double> pix;

    GrayImage() = default;
    GrayImage(std::size_t height, std::size_t width, double fill = 0.0)
        : h(height), w(width), pix(height * width, fill) {}

    double& at(std::size_t y, std::size_t x) { return pix[y * w + x]; }
    double at(std::size_t y, std::size_t x) const { return pix[y * w + x]; }
};

struct BinaryMask {
    std::size_t h = 0, w = 0;
    std::vector<std::uint8_t> m;

    BinaryMask() = default;
    BinaryMask(std::size_t height, std::size_t width, std::uint8_t fill = 0)
        : h(height), w(width), m(height * width, fill) {}

    std::uint8_t& at(std::size_t y, std::size_t x) { return m[y * w + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return m[y * w + x]; }
    std::size_t count() const {
        std::size_t n = 0;
        for (const auto v : m) n += v ? 1 : 0;
        return n;
    }
    bool empty_mask() const { return count() == 0; }
};

// One exam image with its tissue pre-segmentation and ground-truth anomaly
// mask (empty for healthy images).
struct LabeledImage {
    GrayImage image;
    BinaryMask tissue_mask;
    BinaryMask anomaly_mask;
    std::string subject_id;
    std::string image_id;
    std::string label;  // healthy | mass | calcification
};

// Binary PGM (P5), 8-bit or 16-bit; intensities are divided by the file's
// maxval on ingestion. 16-bit payloads are big-endian per the format.
void write_pgm(const std::filesystem::path& path, const GrayImage& img, unsigned maxval = 65535);
GrayImage read_pgm(const std::filesystem::path& path);
void write_mask_pgm(const std::filesystem::path& path, const BinaryMask& mask);
BinaryMask read_mask_pgm(const std::filesystem::path& path);

// Seeded synthetic stand-in for a mammography corpus: smooth random-field
// tissue inside an elliptical mask over a dark background; mass images add
// 1-3 blurred bright ellipses (radius 8-24 px), calcification images add
// clusters of 3-10 bright 1-3 px speckles. Subjects cover two images each.
std::vector<LabeledImage> make_synthetic_dataset(std::size_t n_healthy, std::size_t n_mass,
                                                 std::size_t n_calc, std::size_t image_size,
                                                 std::uint64_t seed);

struct DatasetEntry {
    std::string subject_id, image_id, image_path, tissue_path, anomaly_path, label;
};

// Writes images/masks as PGM plus a manifest.txt describing every entry.
void write_dataset(const std::filesystem::path& dir, const std::vector<LabeledImage>& images);
std::vector<DatasetEntry> read_manifest(const std::filesystem::path& manifest_path);
LabeledImage load_entry(const DatasetEntry& entry, const std::filesystem::path& base_dir);

}  // namespace patchspn
