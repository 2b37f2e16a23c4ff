#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "patchspn/autoencoder.hpp"
#include "patchspn/em.hpp"

namespace patchspn {

// Resolved experiment configuration. Defaults match the reference protocol:
// 64x64 patches, stride 16, batch 64, beta 0.1, commitment 0.25,
// depth 1 / 50 replicas / 45 inputs, 99th-percentile thresholding.
struct RunConfig {
    // [paths]
    std::string data_root = "data";
    std::string output_root = "out";

    // [seeds]
    std::uint64_t seed = 1;

    // [ae]
    std::string ae_variant = "cae";
    std::size_t ae_epochs = 0;  // 0 = per-variant default (100 CAE/bVAE, 20 VQVAE)
    double ae_lr = 0.0;         // 0 = per-variant default (1e-5 CAE/bVAE, 1e-4 VQVAE)
    std::size_t ae_batch = 64;
    std::size_t patch_size = 64;
    std::vector<std::size_t> channels = {32, 64, 128};
    std::size_t latent_dim = 64;
    double beta = 0.1;
    std::size_t codebook_size = 256;
    std::size_t embed_dim = 64;
    double commitment = 0.25;
    std::size_t residual_blocks = 6;

    // [spn]
    std::size_t spn_depth = 1;
    std::size_t spn_replicas = 50;
    std::size_t spn_inputs = 45;
    std::size_t spn_sums = 0;  // 0 = same as inputs
    std::size_t spn_roots = 1;
    std::size_t em_epochs = 50;
    std::size_t em_batch = 64;
    double em_step = 1e-4;
    std::string em_mode = "stochastic";

    // [pipeline]
    std::size_t patches_per_image = 120;
    std::size_t stride = 16;
    double percentile = 99.0;
    double train_frac = 0.9;

    int threads = 0;  // 0 = hardware default

    static RunConfig from_file(const std::filesystem::path& path);
    void apply(const std::string& section, const std::string& key, const std::string& value);
    std::string to_text() const;
    std::uint64_t config_hash() const;

    AeConfig ae_config() const;
    AeTrainConfig ae_train_config(std::uint64_t stage_seed) const;
    EmConfig em_config(std::uint64_t stage_seed) const;
    std::size_t resolved_spn_sums() const { return spn_sums == 0 ? spn_inputs : spn_sums; }
};

std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64_file(const std::filesystem::path& path);
std::string hex64(std::uint64_t v);

// Exclusive per-run-directory lock file; removed on destruction.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::filesystem::path path_;
    bool held_ = false;
};

// Reproducibility record for one subcommand run.
class RunManifest {
public:
    RunManifest(std::string command, const RunConfig& cfg);
    void add_input(const std::filesystem::path& path);
    void add_output(const std::filesystem::path& path);
    void write(const std::filesystem::path& dir) const;

private:
    std::string command_;
    std::string config_hash_;
    std::uint64_t seed_;
    std::vector<std::pair<std::string, std::string>> inputs_, outputs_;
};

}  // namespace patchspn
