#include "patchspn/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "patchspn/errors.hpp"
#include "patchspn/parallel.hpp"
#include "patchspn/tensor_io.hpp"

namespace patchspn {

std::size_t HeatmapResult::nearest_i(std::size_t y) const {
    const double half = static_cast<double>(patch_size) / 2.0;
    const double f = (static_cast<double>(y) - half) / static_cast<double>(stride);
    const auto i = static_cast<std::ptrdiff_t>(std::llround(f));
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(grid_h) - 1));
}

std::size_t HeatmapResult::nearest_j(std::size_t x) const {
    const double half = static_cast<double>(patch_size) / 2.0;
    const double f = (static_cast<double>(x) - half) / static_cast<double>(stride);
    const auto j = static_cast<std::ptrdiff_t>(std::llround(f));
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(j, 0, static_cast<std::ptrdiff_t>(grid_w) - 1));
}

Tensor HeatmapResult::upsampled() const {
    Tensor up({image_h, image_w});
    for (std::size_t y = 0; y < image_h; ++y) {
        const std::size_t i = nearest_i(y);
        for (std::size_t x = 0; x < image_w; ++x) {
            up[y * image_w + x] = scores[i * grid_w + nearest_j(x)];
        }
    }
    return up;
}

std::vector<double> HeatmapResult::valid_scores() const {
    std::vector<double> out;
    for (std::size_t i = 0; i < valid.size(); ++i) {
        if (valid[i]) out.push_back(scores[i]);
    }
    return out;
}

HeatmapResult score_image(const LabeledImage& img, const AeModel& ae, const Circuit* circuit,
                          std::size_t stride, std::uint64_t score_seed) {
    if (stride == 0) throw ValueError("score_image: stride must be >= 1");
    const std::size_t p = ae.config().patch_size;
    const std::size_t h = img.image.h, w = img.image.w;
    if (h < p || w < p) {
        throw ValueError("image " + img.image_id + " smaller than the patch size");
    }
    if (circuit != nullptr && circuit->n_vars != ae.config().feature_dim()) {
        throw ShapeError("circuit expects " + std::to_string(circuit->n_vars) +
                         " variables but the autoencoder produces " +
                         std::to_string(ae.config().feature_dim()));
    }

    HeatmapResult hm;
    hm.image_h = h;
    hm.image_w = w;
    hm.stride = stride;
    hm.patch_size = p;
    hm.grid_h = (h - p) / stride + 1;
    hm.grid_w = (w - p) / stride + 1;
    hm.scores = Tensor({hm.grid_h, hm.grid_w});
    hm.valid.assign(hm.grid_h * hm.grid_w, 0);

    std::vector<std::size_t> cells;
    for (std::size_t i = 0; i < hm.grid_h; ++i) {
        for (std::size_t j = 0; j < hm.grid_w; ++j) {
            if (img.tissue_mask.at(hm.center_row(i), hm.center_col(j))) {
                hm.valid[i * hm.grid_w + j] = 1;
                cells.push_back(i * hm.grid_w + j);
            }
        }
    }
    if (cells.empty()) {
        throw ValueError("image " + img.image_id + " has no valid stride-aligned patch centers");
    }

    Tensor batch({cells.size(), p, p});
    for (std::size_t c = 0; c < cells.size(); ++c) {
        const std::size_t i = cells[c] / hm.grid_w, j = cells[c] % hm.grid_w;
        const std::size_t y0 = i * stride, x0 = j * stride;
        double* dst = batch.data() + c * p * p;
        for (std::size_t y = 0; y < p; ++y) {
            const double* src = img.image.pix.data() + (y0 + y) * w + x0;
            std::copy(src, src + p, dst + y * p);
        }
    }

    std::vector<double> cell_scores;
    if (circuit != nullptr) {
        Tensor latents = ae.encode(batch);
        for (std::size_t r = 0; r < latents.dim(0); ++r) {
            double* row = latents.data() + r * latents.dim(1);
            const std::vector<double> z = circuit->standardized({row, latents.dim(1)});
            std::copy(z.begin(), z.end(), row);
        }
        cell_scores = log_likelihood(*circuit, latents);
        for (auto& s : cell_scores) s = -s;
    } else {
        cell_scores = ae.anomaly_scores(batch, score_seed);
    }

    double min_score = std::numeric_limits<double>::infinity();
    for (const double s : cell_scores) min_score = std::min(min_score, s);
    hm.scores.fill(min_score);
    for (std::size_t c = 0; c < cells.size(); ++c) hm.scores[cells[c]] = cell_scores[c];
    return hm;
}

BinaryMask threshold_heatmap(HeatmapResult& hm, double percentile) {
    if (!(percentile > 0.0 && percentile < 100.0)) {
        throw ValueError("percentile must be in (0, 100)");
    }
    std::vector<double> vals = hm.valid_scores();
    if (vals.empty()) throw ValueError("threshold_heatmap: empty valid region");
    std::sort(vals.begin(), vals.end());
    // nearest-rank percentile
    auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * static_cast<double>(vals.size())));
    rank = std::clamp<std::size_t>(rank, 1, vals.size());
    const double threshold = vals[rank - 1];

    std::vector<std::uint8_t> marked(hm.valid.size(), 0);
    for (std::size_t i = 0; i < hm.valid.size(); ++i) {
        marked[i] = (hm.valid[i] && hm.scores[i] > threshold) ? 1 : 0;
    }
    hm.segmentation = BinaryMask(hm.image_h, hm.image_w);
    for (std::size_t y = 0; y < hm.image_h; ++y) {
        const std::size_t i = hm.nearest_i(y);
        for (std::size_t x = 0; x < hm.image_w; ++x) {
            const std::size_t cell = i * hm.grid_w + hm.nearest_j(x);
            hm.segmentation.at(y, x) = marked[cell];
        }
    }
    return hm.segmentation;
}

void save_heatmap(const std::filesystem::path& dir, const std::string& image_id, const HeatmapResult& hm) {
    save_tensor(dir / (image_id + "_heatmap.aetn"), hm.scores, DType::f64);
    Tensor valid({hm.grid_h, hm.grid_w});
    for (std::size_t i = 0; i < hm.valid.size(); ++i) valid[i] = hm.valid[i] ? 1.0 : 0.0;
    save_tensor(dir / (image_id + "_valid.aetn"), valid, DType::f32);
    {
        std::ofstream meta(dir / (image_id + "_meta.txt"));
        if (!meta) throw IoError("cannot write heatmap metadata for " + image_id);
        meta << "image_h=" << hm.image_h << "\nimage_w=" << hm.image_w << "\nstride=" << hm.stride
             << "\npatch_size=" << hm.patch_size << "\n";
    }

    // normalized preview of the upsampled map
    const Tensor up = hm.upsampled();
    double lo = up[0], hi = up[0];
    for (std::size_t i = 0; i < up.size(); ++i) {
        lo = std::min(lo, up[i]);
        hi = std::max(hi, up[i]);
    }
    GrayImage preview(hm.image_h, hm.image_w);
    const double span = hi > lo ? hi - lo : 1.0;
    for (std::size_t i = 0; i < up.size(); ++i) preview.pix[i] = (up[i] - lo) / span;
    write_pgm(dir / (image_id + "_heatmap.pgm"), preview, 255);
    if (!hm.segmentation.m.empty()) {
        write_mask_pgm(dir / (image_id + "_segmentation.pgm"), hm.segmentation);
    }
}

HeatmapResult load_heatmap(const std::filesystem::path& dir, const std::string& image_id) {
    HeatmapResult hm;
    hm.scores = load_tensor(dir / (image_id + "_heatmap.aetn"));
    const Tensor valid = load_tensor(dir / (image_id + "_valid.aetn"));
    if (hm.scores.rank() != 2 || !valid.same_shape(hm.scores)) {
        throw IoError("inconsistent heatmap tensors for image " + image_id);
    }
    hm.grid_h = hm.scores.dim(0);
    hm.grid_w = hm.scores.dim(1);
    hm.valid.resize(valid.size());
    for (std::size_t i = 0; i < valid.size(); ++i) hm.valid[i] = valid[i] > 0.5 ? 1 : 0;

    std::ifstream meta(dir / (image_id + "_meta.txt"));
    if (!meta) throw IoError("missing heatmap metadata for image " + image_id);
    std::string line;
    while (std::getline(meta, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::size_t value = std::stoull(line.substr(eq + 1));
        if (key == "image_h") hm.image_h = value;
        else if (key == "image_w") hm.image_w = value;
        else if (key == "stride") hm.stride = value;
        else if (key == "patch_size") hm.patch_size = value;
    }
    return hm;
}

}  // namespace patchspn
