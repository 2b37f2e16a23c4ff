#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "patchspn/layers.hpp"
#include "patchspn/optimizer.hpp"
#include "patchspn/rng.hpp"
#include "patchspn/tensor.hpp"

namespace patchspn {

enum class AeVariant { cae, beta_vae, vq_vae };

const char* ae_variant_name(AeVariant v);
AeVariant ae_variant_from_string(const std::string& s);

struct AeConfig {
    AeVariant variant = AeVariant::cae;
    std::size_t patch_size = 64;                   // divisible by 8
    std::vector<std::size_t> channels = {32, 64, 128};
    std::size_t latent_dim = 64;
    double beta = 0.1;                             // KL weight (beta-VAE)
    std::size_t codebook_size = 256;               // K
    std::size_t embed_dim = 64;                    // B
    double commitment = 0.25;                      // lambda
    std::size_t residual_blocks = 6;

    void validate() const;
    // Features from the encoder that feed the density model: latent_dim for
    // CAE/beta-VAE, embed_dim for VQVAE.
    std::size_t feature_dim() const { return variant == AeVariant::vq_vae ? embed_dim : latent_dim; }
};

struct Codebook {
    Tensor embeddings;  // K x B
    Tensor grad;
    double commitment = 0.25;

    std::size_t size() const { return embeddings.size() == 0 ? 0 : embeddings.dim(0); }
    std::size_t dim() const { return embeddings.size() == 0 ? 0 : embeddings.dim(1); }
};

struct VaeOutput {
    Tensor mu, logvar, z, recon;
};

struct QuantizeResult {
    std::vector<std::size_t> indices;  // one per spatial position, row-major over (n, y, x)
    Tensor quantized;                  // same shape as encoder_out; forward value of the
                                       // straight-through output (backward passes gradients
                                       // to encoder_out unchanged)
};

struct VaeLossTerms {
    double total, recon_term, kl_term;
};

struct VqVaeLossTerms {
    double total, recon_term, codebook_term, commitment_term;
};

// Mean over all entries of the squared difference.
double cae_loss(const Tensor& x, const Tensor& recon);

// z = mu + exp(0.5 * logvar) * eps, eps ~ N(0, I) from rng.
Tensor reparameterize(const Tensor& mu, const Tensor& logvar, Rng& rng);

// total = MSE(x, recon) + beta * KL(q || N(0,I)); KL summed over latent dims,
// averaged over the batch. This is the minimized loss.
VaeLossTerms vae_loss(const Tensor& x, const VaeOutput& out, double beta);

// Nearest embedding per spatial position (encoder_out is N x B x H x W);
// ties break toward the lowest index.
QuantizeResult vqvae_quantize(const Tensor& encoder_out, const Codebook& codebook);

// total = MSE + ||sg[E(x)] - e||^2 + lambda * ||E(x) - sg[e]||^2 with the
// latent terms reduced as a mean over (batch x spatial) positions.
VqVaeLossTerms vqvae_loss(const Tensor& x, const Tensor& recon, const Tensor& encoder_out,
                          const Codebook& codebook);

class AeModel {
public:
    static AeModel build(const AeConfig& cfg, std::uint64_t seed);

    const AeConfig& config() const { return cfg_; }

    // ---- frozen-model paths (const, reentrant) ----
    // patches: N x 1 x P x P (or N x P x P).
    Tensor reconstruct(const Tensor& patches) const;          // beta-VAE decodes mu
    Tensor encode(const Tensor& patches) const;               // N x feature_dim
    Tensor encoder_features(const Tensor& patches) const;     // VQVAE: N x B x s x s pre-quantization
    double anomaly_score(const Tensor& patch, Rng& rng) const;
    std::vector<double> anomaly_scores(const Tensor& patches, std::uint64_t score_seed) const;

    // ---- training path (single-writer) ----
    double train_step(const Tensor& batch, AdamOptimizer& opt, Rng& eps_rng);
    double eval_loss(const Tensor& batch, Rng& eps_rng) const;

    // Zeroes gradients, runs forward + backward, returns the loss. A fixed
    // eps tensor (beta-VAE) freezes the reparameterization noise so the same
    // objective can be probed by finite differences.
    double compute_gradients(const Tensor& batch, Rng* eps_rng, const Tensor* fixed_eps = nullptr);

    // The matching deterministic objective value, without touching gradients.
    double loss_value(const Tensor& batch, const Tensor* fixed_eps = nullptr) const;

    std::vector<ParamRef> params();

    void save(const std::filesystem::path& path) const;
    static AeModel load(const std::filesystem::path& path);

    Codebook& codebook() { return codebook_; }
    const Codebook& codebook() const { return codebook_; }

    // Exposed for tests and fixtures that pin weights by hand.
    std::vector<std::unique_ptr<Layer>>& encoder_stack() { return encoder_; }
    std::vector<std::unique_ptr<Layer>>& decoder_stack() { return decoder_; }
    Dense* latent_head() { return latent_head_.get(); }
    Dense* mu_head() { return mu_head_.get(); }
    Dense* logvar_head() { return logvar_head_.get(); }
    Dense* decoder_input() { return dec_in_.get(); }

    AeModel(AeModel&&) = default;
    AeModel& operator=(AeModel&&) = default;

private:
    AeModel() = default;

    Tensor as_batch(const Tensor& patches) const;
    Tensor run_encoder(const Tensor& x) const;
    Tensor decode_features(const Tensor& latent) const;   // CAE/beta-VAE: latent -> recon
    Tensor decode_quantized(const Tensor& q) const;       // VQVAE
    Tensor clamp_logvar(const Tensor& lv) const;

    AeConfig cfg_;
    std::vector<std::unique_ptr<Layer>> encoder_;   // conv stack (+res blocks +1x1 head for VQVAE)
    std::unique_ptr<Dense> latent_head_;            // CAE
    std::unique_ptr<Dense> mu_head_, logvar_head_;  // beta-VAE
    std::unique_ptr<Dense> dec_in_;                 // CAE/beta-VAE
    std::unique_ptr<ReLU> dec_in_relu_;
    std::vector<std::unique_ptr<Layer>> decoder_;
    Codebook codebook_;
    std::size_t feat_spatial_ = 0;   // patch_size / 8
    std::size_t feat_channels_ = 0;  // channels.back()
};

struct AeTrainConfig {
    std::size_t epochs = 100;
    double lr = 1e-5;
    std::size_t batch_size = 64;
    std::uint64_t seed = 1;

    static AeTrainConfig defaults_for(AeVariant v);
};

struct AeTrainTrace {
    std::vector<double> train_loss;  // one entry per epoch
    std::vector<double> val_loss;
};

// Mini-batch training with seeded shuffling; bit-reproducible for a fixed
// seed and thread cap. Patches are N x 1 x P x P or N x P x P in [0, 1].
AeTrainTrace train_ae(AeModel& model, const Tensor& train_patches, const Tensor& val_patches,
                      const AeTrainConfig& cfg);

void write_train_trace_csv(const std::filesystem::path& path, const AeTrainTrace& trace);

}  // namespace patchspn
