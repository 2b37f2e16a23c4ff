#include "patchspn/patches.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "patchspn/distance.hpp"
#include "patchspn/errors.hpp"
#include "patchspn/tensor_io.hpp"

namespace patchspn {

void PatchSet::append(PatchSet&& other) {
    if (other.count() == 0) return;
    if (count() == 0) {
        *this = std::move(other);
        return;
    }
    if (patches.dim(1) != other.patches.dim(1) || patches.dim(2) != other.patches.dim(2)) {
        throw ShapeError("cannot append patch sets of different patch sizes");
    }
    std::vector<double> data = patches.vec();
    data.insert(data.end(), other.patches.vec().begin(), other.patches.vec().end());
    patches = Tensor::from_data({count() + other.count(), patches.dim(1), patches.dim(2)}, std::move(data));
    provenance.insert(provenance.end(), std::make_move_iterator(other.provenance.begin()),
                      std::make_move_iterator(other.provenance.end()));
}

namespace {

// Boundary pixels: tissue pixels with a non-tissue 4-neighbour (image edges
// count as non-tissue).
std::vector<std::uint8_t> boundary_pixels(const BinaryMask& tissue) {
    const std::size_t h = tissue.h, w = tissue.w;
    std::vector<std::uint8_t> boundary(h * w, 0);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            if (!tissue.at(y, x)) continue;
            const bool edge = y == 0 || x == 0 || y + 1 == h || x + 1 == w;
            if (edge || !tissue.at(y - 1, x) || !tissue.at(y + 1, x) || !tissue.at(y, x - 1) ||
                !tissue.at(y, x + 1)) {
                boundary[y * w + x] = 1;
            }
        }
    }
    return boundary;
}

}  // namespace

PatchSet extract_patches(const LabeledImage& img, std::size_t n_per_image, std::size_t patch_size,
                         Rng& rng, bool reject_anomalous) {
    const std::size_t h = img.image.h, w = img.image.w;
    if (patch_size == 0 || patch_size % 2 != 0) throw ValueError("patch size must be positive and even");
    if (h < patch_size || w < patch_size) {
        throw ValueError("image " + std::to_string(h) + "x" + std::to_string(w) +
                         " too small for " + std::to_string(patch_size) + "-px patches");
    }
    if (img.tissue_mask.empty_mask()) throw ValueError("tissue mask is empty for image " + img.image_id);
    const std::size_t half = patch_size / 2;

    const std::vector<std::uint8_t> boundary = boundary_pixels(img.tissue_mask);
    const std::vector<double> bdist2 = squared_distance_transform(boundary, h, w);
    const double band2 = static_cast<double>(kContourBand * kContourBand);

    std::vector<std::size_t> interior, contour;
    for (std::size_t y = half; y + half <= h; ++y) {
        for (std::size_t x = half; x + half <= w; ++x) {
            const std::size_t i = y * w + x;
            if (bdist2[i] <= band2) {
                contour.push_back(i);
            } else if (img.tissue_mask.m[i]) {
                interior.push_back(i);
            }
        }
    }

    // Window-overlap test against the anomaly mask via an integral image.
    std::vector<std::uint32_t> integral((h + 1) * (w + 1), 0);
    if (reject_anomalous && !img.anomaly_mask.empty_mask()) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                integral[(y + 1) * (w + 1) + (x + 1)] = integral[y * (w + 1) + (x + 1)] +
                                                        integral[(y + 1) * (w + 1) + x] -
                                                        integral[y * (w + 1) + x] +
                                                        (img.anomaly_mask.at(y, x) ? 1u : 0u);
            }
        }
    }
    const auto window_clean = [&](std::size_t cy, std::size_t cx) {
        if (!reject_anomalous || img.anomaly_mask.empty_mask()) return true;
        const std::size_t y0 = cy - half, x0 = cx - half;
        const std::size_t y1 = y0 + patch_size, x1 = x0 + patch_size;
        const std::uint32_t sum = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1] -
                                  integral[y1 * (w + 1) + x0] + integral[y0 * (w + 1) + x0];
        return sum == 0;
    };

    const std::size_t n_interior = (n_per_image + 1) / 2;
    const std::size_t n_contour = n_per_image / 2;

    PatchSet set;
    if (n_per_image == 0) return set;
    set.patches = Tensor({n_per_image, patch_size, patch_size});
    set.provenance.reserve(n_per_image);
    std::size_t emitted = 0;
    const std::size_t max_attempts = 1000 * std::max<std::size_t>(n_per_image, 1);

    const auto draw = [&](const std::vector<std::size_t>& candidates, std::size_t count,
                          PatchRegion region, const char* what) {
        if (count == 0) return;
        if (candidates.empty()) {
            throw ValueError("no " + std::string(what) + " patch centers available in image " +
                             img.image_id);
        }
        std::size_t attempts = 0;
        for (std::size_t got = 0; got < count;) {
            if (++attempts > max_attempts) {
                throw ValueError("insufficient candidate centers after " + std::to_string(max_attempts) +
                                 " attempts (" + what + ", image " + img.image_id + ")");
            }
            const std::size_t pick = candidates[rng.uniform_index(candidates.size())];
            const std::size_t cy = pick / w, cx = pick % w;
            if (!window_clean(cy, cx)) continue;
            double* dst = set.patches.data() + emitted * patch_size * patch_size;
            const std::size_t y0 = cy - half, x0 = cx - half;
            for (std::size_t y = 0; y < patch_size; ++y) {
                const double* src = img.image.pix.data() + (y0 + y) * w + x0;
                std::copy(src, src + patch_size, dst + y * patch_size);
            }
            set.provenance.push_back({img.image_id, cy, cx, region});
            ++emitted;
            ++got;
        }
    };

    draw(interior, n_interior, PatchRegion::interior, "interior");
    draw(contour, n_contour, PatchRegion::contour, "contour");
    return set;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_subjects(
    const std::vector<std::string>& subject_per_item, double train_frac, std::uint64_t seed) {
    if (!(train_frac > 0.0 && train_frac < 1.0)) throw ValueError("train_frac must be in (0, 1)");
    std::vector<std::string> subjects;
    std::map<std::string, std::vector<std::size_t>> by_subject;
    for (std::size_t i = 0; i < subject_per_item.size(); ++i) {
        auto [it, inserted] = by_subject.try_emplace(subject_per_item[i]);
        if (inserted) subjects.push_back(subject_per_item[i]);
        it->second.push_back(i);
    }
    if (subjects.size() < 2) throw ValueError("subject split needs at least 2 distinct subjects");

    Rng rng(seed);
    for (std::size_t i = subjects.size(); i > 1; --i) {
        std::swap(subjects[i - 1], subjects[rng.uniform_index(i)]);
    }
    auto n_train = static_cast<std::size_t>(
        std::llround(train_frac * static_cast<double>(subjects.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, subjects.size() - 1);

    std::pair<std::vector<std::size_t>, std::vector<std::size_t>> out;
    for (std::size_t s = 0; s < subjects.size(); ++s) {
        auto& side = s < n_train ? out.first : out.second;
        for (const std::size_t item : by_subject[subjects[s]]) side.push_back(item);
    }
    std::sort(out.first.begin(), out.first.end());
    std::sort(out.second.begin(), out.second.end());
    return out;
}

std::pair<std::vector<DatasetEntry>, std::vector<DatasetEntry>> split_dataset(
    const std::vector<DatasetEntry>& entries, double train_frac, std::uint64_t seed) {
    std::vector<std::string> subjects(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) subjects[i] = entries[i].subject_id;
    const auto [train_idx, val_idx] = split_subjects(subjects, train_frac, seed);
    std::pair<std::vector<DatasetEntry>, std::vector<DatasetEntry>> out;
    for (const std::size_t i : train_idx) out.first.push_back(entries[i]);
    for (const std::size_t i : val_idx) out.second.push_back(entries[i]);
    return out;
}

void save_patchset(const std::filesystem::path& tensor_path, const PatchSet& set) {
    save_tensor(tensor_path, set.patches, DType::f32);
    std::filesystem::path csv = tensor_path;
    csv.replace_extension(".csv");
    std::ofstream os(csv);
    if (!os) throw IoError("cannot open for writing: " + csv.string());
    os << "image_id,center_row,center_col,region\n";
    for (const auto& p : set.provenance) {
        os << p.image_id << ',' << p.center_row << ',' << p.center_col << ','
           << (p.region == PatchRegion::interior ? "interior" : "contour") << '\n';
    }
}

PatchSet load_patchset(const std::filesystem::path& tensor_path) {
    PatchSet set;
    set.patches = load_tensor(tensor_path);
    if (set.patches.rank() != 3) {
        throw IoError("patch tensor must be rank 3 (n, P, P): " + tensor_path.string());
    }
    std::filesystem::path csv = tensor_path;
    csv.replace_extension(".csv");
    std::ifstream is(csv);
    if (!is) throw IoError("cannot open patch provenance: " + csv.string());
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        PatchProvenance p;
        std::string row, col, region;
        if (!std::getline(ss, p.image_id, ',') || !std::getline(ss, row, ',') ||
            !std::getline(ss, col, ',') || !std::getline(ss, region)) {
            throw IoError("malformed provenance line: " + line);
        }
        p.center_row = std::stoull(row);
        p.center_col = std::stoull(col);
        p.region = region == "contour" ? PatchRegion::contour : PatchRegion::interior;
        set.provenance.push_back(std::move(p));
    }
    if (set.provenance.size() != set.patches.dim(0)) {
        throw IoError("provenance rows do not match patch count in " + tensor_path.string());
    }
    return set;
}

}  // namespace patchspn
