#include "patchspn/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "patchspn/errors.hpp"
#include "patchspn/rng.hpp"

namespace patchspn {

// ----------------------------------------------------------------- PGM I/O

void write_pgm(const std::filesystem::path& path, const GrayImage& img, unsigned maxval) {
    if (maxval == 0 || maxval > 65535) throw ValueError("pgm maxval must be in [1, 65535]");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "P5\n" << img.w << " " << img.h << "\n" << maxval << "\n";
    const double scale = static_cast<double>(maxval);
    if (maxval < 256) {
        std::vector<unsigned char> row(img.w);
        for (std::size_t y = 0; y < img.h; ++y) {
            for (std::size_t x = 0; x < img.w; ++x) {
                const double v = std::clamp(img.at(y, x), 0.0, 1.0);
                row[x] = static_cast<unsigned char>(std::lround(v * scale));
            }
            os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
        }
    } else {
        std::vector<unsigned char> row(img.w * 2);
        for (std::size_t y = 0; y < img.h; ++y) {
            for (std::size_t x = 0; x < img.w; ++x) {
                const double v = std::clamp(img.at(y, x), 0.0, 1.0);
                const auto q = static_cast<unsigned>(std::lround(v * scale));
                row[2 * x] = static_cast<unsigned char>(q >> 8);  // big-endian
                row[2 * x + 1] = static_cast<unsigned char>(q & 0xff);
            }
            os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
        }
    }
    if (!os) throw IoError("failed writing " + path.string());
}

namespace {

unsigned next_pgm_token(std::istream& is, const std::string& path) {
    // skips whitespace and '#' comments
    while (true) {
        const int ch = is.peek();
        if (ch == EOF) throw IoError("truncated PGM header: " + path);
        if (std::isspace(ch)) {
            is.get();
            continue;
        }
        if (ch == '#') {
            std::string line;
            std::getline(is, line);
            continue;
        }
        break;
    }
    unsigned value = 0;
    is >> value;
    if (!is) throw IoError("malformed PGM header: " + path);
    return value;
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path.string());
    char m0 = 0, m1 = 0;
    is.get(m0);
    is.get(m1);
    if (m0 != 'P' || m1 != '5') throw IoError("not a binary PGM (P5): " + path.string());
    const unsigned w = next_pgm_token(is, path.string());
    const unsigned h = next_pgm_token(is, path.string());
    const unsigned maxval = next_pgm_token(is, path.string());
    if (maxval == 0 || maxval > 65535) throw IoError("bad PGM maxval in " + path.string());
    is.get();  // single whitespace after maxval

    GrayImage img(h, w);
    const double scale = 1.0 / static_cast<double>(maxval);
    if (maxval < 256) {
        std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h);
        is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!is) throw IoError("truncated PGM payload: " + path.string());
        for (std::size_t i = 0; i < buf.size(); ++i) img.pix[i] = buf[i] * scale;
    } else {
        std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 2);
        is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!is) throw IoError("truncated PGM payload: " + path.string());
        for (std::size_t i = 0; i < static_cast<std::size_t>(w) * h; ++i) {
            const unsigned v = (static_cast<unsigned>(buf[2 * i]) << 8) | buf[2 * i + 1];
            img.pix[i] = v * scale;
        }
    }
    return img;
}

void write_mask_pgm(const std::filesystem::path& path, const BinaryMask& mask) {
    GrayImage img(mask.h, mask.w);
    for (std::size_t i = 0; i < mask.m.size(); ++i) img.pix[i] = mask.m[i] ? 1.0 : 0.0;
    write_pgm(path, img, 255);
}

BinaryMask read_mask_pgm(const std::filesystem::path& path) {
    const GrayImage img = read_pgm(path);
    BinaryMask mask(img.h, img.w);
    for (std::size_t i = 0; i < img.pix.size(); ++i) mask.m[i] = img.pix[i] > 0.5 ? 1 : 0;
    return mask;
}

// ------------------------------------------------------- synthetic corpus

namespace {

// Smooth field: coarse seeded grid bilinearly upsampled across the image.
void add_bilinear_noise(GrayImage& img, std::size_t cell, double amplitude, Rng& rng) {
    const std::size_t gh = img.h / cell + 2, gw = img.w / cell + 2;
    std::vector<double> grid(gh * gw);
    for (auto& g : grid) g = rng.uniform(-amplitude, amplitude);
    for (std::size_t y = 0; y < img.h; ++y) {
        const double fy = static_cast<double>(y) / static_cast<double>(cell);
        const auto y0 = static_cast<std::size_t>(fy);
        const double ty = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < img.w; ++x) {
            const double fx = static_cast<double>(x) / static_cast<double>(cell);
            const auto x0 = static_cast<std::size_t>(fx);
            const double tx = fx - static_cast<double>(x0);
            const double v00 = grid[y0 * gw + x0], v01 = grid[y0 * gw + x0 + 1];
            const double v10 = grid[(y0 + 1) * gw + x0], v11 = grid[(y0 + 1) * gw + x0 + 1];
            img.at(y, x) += (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
        }
    }
}

struct Ellipse {
    double cy, cx, ry, rx, angle;

    // squared normalized radius; <= 1 means inside
    double norm2(double y, double x) const {
        const double dy = y - cy, dx = x - cx;
        const double ca = std::cos(angle), sa = std::sin(angle);
        const double u = ca * dx + sa * dy;
        const double v = -sa * dx + ca * dy;
        return (u * u) / (rx * rx) + (v * v) / (ry * ry);
    }
};

LabeledImage make_image(std::size_t size, const std::string& label, std::uint64_t img_seed) {
    Rng rng(img_seed);
    const auto fsize = static_cast<double>(size);
    LabeledImage out;
    out.label = label;
    out.image = GrayImage(size, size, 0.0);
    out.tissue_mask = BinaryMask(size, size);
    out.anomaly_mask = BinaryMask(size, size);

    Ellipse tissue{fsize * rng.uniform(0.46, 0.54), fsize * rng.uniform(0.46, 0.54),
                   fsize * rng.uniform(0.36, 0.44), fsize * rng.uniform(0.30, 0.40),
                   rng.uniform(-0.4, 0.4)};

    GrayImage texture(size, size, rng.uniform(0.32, 0.40));
    add_bilinear_noise(texture, std::max<std::size_t>(size / 8, 4), 0.10, rng);
    add_bilinear_noise(texture, 4, 0.05, rng);
    for (std::size_t y = 0; y < size; ++y) {  // fine grain the decoder cannot express
        for (std::size_t x = 0; x < size; ++x) texture.at(y, x) += rng.uniform(-0.06, 0.06);
    }

    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double n2 = tissue.norm2(static_cast<double>(y), static_cast<double>(x));
            if (n2 <= 1.0) {
                out.tissue_mask.at(y, x) = 1;
                const double vignette = 1.0 - 0.35 * n2;  // falls toward the contour
                out.image.at(y, x) = std::clamp(texture.at(y, x) * vignette + 0.05, 0.0, 1.0);
            } else {
                out.image.at(y, x) = 0.015;
            }
        }
    }

    // Center placement with at least margin_px of tissue on every side
    // (conservative: shrinks the ellipse by margin over its minor radius).
    const auto center_fits = [&](double y, double x, double margin_px) {
        const double rmin = std::min(tissue.ry, tissue.rx);
        const double allowed = 1.0 - margin_px / rmin;
        if (allowed <= 0.0) return false;
        return tissue.norm2(y, x) <= allowed * allowed;
    };

    if (label == "mass") {
        const std::size_t n_masses = 1 + rng.uniform_index(3);
        std::vector<Ellipse> placed;
        for (std::size_t m = 0; m < n_masses; ++m) {
            for (int attempt = 0; attempt < 200; ++attempt) {
                Ellipse mass{rng.uniform(0.2 * fsize, 0.8 * fsize), rng.uniform(0.2 * fsize, 0.8 * fsize),
                             rng.uniform(8.0, 24.0), rng.uniform(8.0, 24.0), rng.uniform(-1.5, 1.5)};
                const double rmax = std::max(mass.ry, mass.rx);
                if (!center_fits(mass.cy, mass.cx, rmax + 8.0)) continue;
                bool clash = false;
                for (const auto& other : placed) {
                    const double dy = other.cy - mass.cy, dx = other.cx - mass.cx;
                    const double gap = std::max(other.ry, other.rx) + rmax + 14.0;
                    if (dy * dy + dx * dx < gap * gap) clash = true;
                }
                if (clash) continue;
                const double peak = rng.uniform(0.32, 0.5);
                const auto y0 = static_cast<std::size_t>(std::max(0.0, mass.cy - rmax - 2));
                const auto y1 = static_cast<std::size_t>(std::min(fsize - 1, mass.cy + rmax + 2));
                const auto x0 = static_cast<std::size_t>(std::max(0.0, mass.cx - rmax - 2));
                const auto x1 = static_cast<std::size_t>(std::min(fsize - 1, mass.cx + rmax + 2));
                for (std::size_t y = y0; y <= y1; ++y) {
                    for (std::size_t x = x0; x <= x1; ++x) {
                        const double n2 = mass.norm2(static_cast<double>(y), static_cast<double>(x));
                        if (n2 <= 1.0 && out.tissue_mask.at(y, x)) {
                            const double bump = peak * std::pow(1.0 - n2, 1.5);
                            out.image.at(y, x) = std::clamp(out.image.at(y, x) + bump, 0.0, 1.0);
                            out.anomaly_mask.at(y, x) = 1;
                        }
                    }
                }
                placed.push_back(mass);
                break;
            }
        }
    } else if (label == "calcification") {
        const std::size_t n_clusters = 2 + rng.uniform_index(3);
        for (std::size_t cl = 0; cl < n_clusters; ++cl) {
            double cy = 0, cx = 0;
            bool found = false;
            for (int attempt = 0; attempt < 200 && !found; ++attempt) {
                cy = rng.uniform(0.2 * fsize, 0.8 * fsize);
                cx = rng.uniform(0.2 * fsize, 0.8 * fsize);
                found = center_fits(cy, cx, 14.0);
            }
            if (!found) continue;
            const std::size_t n_speckles = 3 + rng.uniform_index(8);
            for (std::size_t sp = 0; sp < n_speckles; ++sp) {
                const double sy = cy + rng.uniform(-9.0, 9.0);
                const double sx = cx + rng.uniform(-9.0, 9.0);
                const std::size_t speck = 1 + rng.uniform_index(3);  // 1-3 px square
                const double amp = rng.uniform(0.35, 0.55);
                const auto y0 = static_cast<std::ptrdiff_t>(sy);
                const auto x0 = static_cast<std::ptrdiff_t>(sx);
                for (std::size_t dy = 0; dy < speck; ++dy) {
                    for (std::size_t dx = 0; dx < speck; ++dx) {
                        const std::ptrdiff_t y = y0 + static_cast<std::ptrdiff_t>(dy);
                        const std::ptrdiff_t x = x0 + static_cast<std::ptrdiff_t>(dx);
                        if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(size) ||
                            x >= static_cast<std::ptrdiff_t>(size)) {
                            continue;
                        }
                        if (!out.tissue_mask.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)))
                            continue;
                        auto& px = out.image.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
                        px = std::clamp(px + amp, 0.0, 1.0);
                        out.anomaly_mask.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1;
                    }
                }
            }
        }
    }
    return out;
}

}  // namespace

std::vector<LabeledImage> make_synthetic_dataset(std::size_t n_healthy, std::size_t n_mass,
                                                 std::size_t n_calc, std::size_t image_size,
                                                 std::uint64_t seed) {
    if (image_size < 128) {
        throw ValueError("synthetic image_size must be >= 128 (stride-16 scoring needs room)");
    }
    std::vector<LabeledImage> images;
    images.reserve(n_healthy + n_mass + n_calc);
    std::size_t index = 0;
    const auto emit = [&](const std::string& label, const char* prefix, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i, ++index) {
            LabeledImage img = make_image(image_size, label, derive_seed(seed, index));
            char buf[32];
            std::snprintf(buf, sizeof buf, "%s%05zu", prefix, i);
            img.image_id = buf;
            std::snprintf(buf, sizeof buf, "subj%05zu", index / 2);  // two images per subject
            img.subject_id = buf;
            images.push_back(std::move(img));
        }
    };
    emit("healthy", "h", n_healthy);
    emit("mass", "m", n_mass);
    emit("calcification", "c", n_calc);
    return images;
}

// --------------------------------------------------------------- manifest

void write_dataset(const std::filesystem::path& dir, const std::vector<LabeledImage>& images) {
    std::filesystem::create_directories(dir / "images");
    std::ofstream manifest(dir / "manifest.txt");
    if (!manifest) throw IoError("cannot open manifest for writing in " + dir.string());
    manifest << "DATASET v1\n";
    for (const auto& img : images) {
        const std::string img_rel = "images/" + img.image_id + ".pgm";
        const std::string tissue_rel = "images/" + img.image_id + "_tissue.pgm";
        std::string anomaly_rel = "-";
        write_pgm(dir / img_rel, img.image, 65535);
        write_mask_pgm(dir / tissue_rel, img.tissue_mask);
        if (!img.anomaly_mask.empty_mask()) {
            anomaly_rel = "images/" + img.image_id + "_anomaly.pgm";
            write_mask_pgm(dir / anomaly_rel, img.anomaly_mask);
        }
        manifest << img.subject_id << '\t' << img.image_id << '\t' << img_rel << '\t' << tissue_rel
                 << '\t' << anomaly_rel << '\t' << img.label << '\n';
    }
    if (!manifest) throw IoError("failed writing manifest in " + dir.string());
}

std::vector<DatasetEntry> read_manifest(const std::filesystem::path& manifest_path) {
    std::ifstream is(manifest_path);
    if (!is) throw IoError("cannot open manifest: " + manifest_path.string());
    std::string line;
    if (!std::getline(is, line) || line != "DATASET v1") {
        throw IoError("not a DATASET v1 manifest: " + manifest_path.string());
    }
    std::vector<DatasetEntry> entries;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        DatasetEntry e;
        if (!std::getline(ss, e.subject_id, '\t') || !std::getline(ss, e.image_id, '\t') ||
            !std::getline(ss, e.image_path, '\t') || !std::getline(ss, e.tissue_path, '\t') ||
            !std::getline(ss, e.anomaly_path, '\t') || !std::getline(ss, e.label)) {
            throw IoError("malformed manifest line: " + line);
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

LabeledImage load_entry(const DatasetEntry& entry, const std::filesystem::path& base_dir) {
    LabeledImage img;
    img.subject_id = entry.subject_id;
    img.image_id = entry.image_id;
    img.label = entry.label;
    img.image = read_pgm(base_dir / entry.image_path);
    img.tissue_mask = read_mask_pgm(base_dir / entry.tissue_path);
    if (entry.anomaly_path != "-") {
        img.anomaly_mask = read_mask_pgm(base_dir / entry.anomaly_path);
    } else {
        img.anomaly_mask = BinaryMask(img.image.h, img.image.w);
    }
    return img;
}

}  // namespace patchspn
