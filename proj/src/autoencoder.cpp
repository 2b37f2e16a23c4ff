#include "patchspn/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "patchspn/errors.hpp"
#include "patchspn/parallel.hpp"
#include "patchspn/tensor_io.hpp"

namespace patchspn {

const char* ae_variant_name(AeVariant v) {
    switch (v) {
        case AeVariant::cae: return "cae";
        case AeVariant::beta_vae: return "bvae";
        case AeVariant::vq_vae: return "vqvae";
    }
    return "?";
}

AeVariant ae_variant_from_string(const std::string& s) {
    if (s == "cae") return AeVariant::cae;
    if (s == "bvae" || s == "beta_vae" || s == "betavae") return AeVariant::beta_vae;
    if (s == "vqvae" || s == "vq_vae") return AeVariant::vq_vae;
    throw ValueError("unknown autoencoder variant '" + s + "' (expected cae|bvae|vqvae)");
}

void AeConfig::validate() const {
    if (channels.empty()) throw ValueError("ae config: channels must be nonempty");
    const std::size_t divisor = std::size_t{1} << channels.size();
    if (patch_size == 0 || patch_size % divisor != 0) {
        throw ValueError("ae config: patch_size " + std::to_string(patch_size) +
                         " must be a positive multiple of " + std::to_string(divisor));
    }
    if (latent_dim == 0) throw ValueError("ae config: latent_dim must be positive");
    if (variant == AeVariant::beta_vae && !(beta > 0.0)) throw ValueError("ae config: beta must be > 0");
    if (variant == AeVariant::vq_vae) {
        if (codebook_size < 2) throw ValueError("ae config: codebook_size must be >= 2");
        if (embed_dim == 0) throw ValueError("ae config: embed_dim must be positive");
        if (!(commitment > 0.0)) throw ValueError("ae config: commitment weight must be > 0");
    }
}

// ------------------------------------------------------------------ losses

double cae_loss(const Tensor& x, const Tensor& recon) {
    require_same_shape(x, recon, "cae_loss");
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - recon[i];
        acc += d * d;
    }
    return acc / static_cast<double>(x.size());
}

Tensor reparameterize(const Tensor& mu, const Tensor& logvar, Rng& rng) {
    require_same_shape(mu, logvar, "reparameterize");
    Tensor z(mu.shape());
    for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = mu[i] + std::exp(0.5 * logvar[i]) * rng.normal();
    }
    return z;
}

namespace {

// KL(q || N(0,I)) summed over latent dims, averaged over the batch rows.
double diagonal_gaussian_kl(const Tensor& mu, const Tensor& logvar) {
    double acc = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double lv = logvar[i];
        if (!std::isfinite(lv)) throw NumericalError("non-finite logvar in KL term");
        acc += mu[i] * mu[i] + std::exp(lv) - 1.0 - lv;
    }
    const std::size_t n = mu.rank() >= 1 ? mu.dim(0) : 1;
    return 0.5 * acc / static_cast<double>(n);
}

}  // namespace

VaeLossTerms vae_loss(const Tensor& x, const VaeOutput& out, double beta) {
    const double recon = cae_loss(x, out.recon);
    const double kl = diagonal_gaussian_kl(out.mu, out.logvar);
    return {recon + beta * kl, recon, kl};
}

QuantizeResult vqvae_quantize(const Tensor& encoder_out, const Codebook& codebook) {
    if (codebook.size() == 0) throw ValueError("vqvae_quantize: empty codebook");
    if (encoder_out.rank() != 4 || encoder_out.dim(1) != codebook.dim()) {
        throw ShapeError("vqvae_quantize: expected (N, " + std::to_string(codebook.dim()) +
                         ", H, W), got " + Tensor::shape_str(encoder_out.shape()));
    }
    const std::size_t n = encoder_out.dim(0), bc = encoder_out.dim(1);
    const std::size_t h = encoder_out.dim(2), w = encoder_out.dim(3);
    const std::size_t positions = n * h * w;
    const std::size_t k = codebook.size();
    QuantizeResult res;
    res.indices.assign(positions, 0);
    res.quantized = Tensor(encoder_out.shape());
    const double* ed = encoder_out.data();
    const double* cb = codebook.embeddings.data();
    double* qd = res.quantized.data();
    const std::size_t plane = h * w;

    parallel_for(positions, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t pos = lo; pos < hi; ++pos) {
            const std::size_t img = pos / plane;
            const std::size_t pix = pos % plane;
            const double* base = ed + img * bc * plane + pix;
            double best = std::numeric_limits<double>::infinity();
            std::size_t best_i = 0;
            for (std::size_t i = 0; i < k; ++i) {
                const double* e = cb + i * bc;
                double d2 = 0.0;
                for (std::size_t b = 0; b < bc; ++b) {
                    const double d = base[b * plane] - e[b];
                    d2 += d * d;
                }
                if (d2 < best) {
                    best = d2;
                    best_i = i;
                }
            }
            res.indices[pos] = best_i;
            const double* e = cb + best_i * bc;
            double* q = qd + img * bc * plane + pix;
            for (std::size_t b = 0; b < bc; ++b) q[b * plane] = e[b];
        }
    });
    return res;
}

VqVaeLossTerms vqvae_loss(const Tensor& x, const Tensor& recon, const Tensor& encoder_out,
                          const Codebook& codebook) {
    const double recon_term = cae_loss(x, recon);
    const QuantizeResult q = vqvae_quantize(encoder_out, codebook);
    const std::size_t positions = encoder_out.dim(0) * encoder_out.dim(2) * encoder_out.dim(3);
    double sq = 0.0;
    for (std::size_t i = 0; i < encoder_out.size(); ++i) {
        const double d = encoder_out[i] - q.quantized[i];
        sq += d * d;
    }
    const double latent_mean = sq / static_cast<double>(positions);
    const double codebook_term = latent_mean;
    const double commitment_term = codebook.commitment * latent_mean;
    return {recon_term + codebook_term + commitment_term, recon_term, codebook_term, commitment_term};
}

// ------------------------------------------------------------------- build

AeModel AeModel::build(const AeConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    AeModel m;
    m.cfg_ = cfg;
    m.feat_spatial_ = cfg.patch_size >> cfg.channels.size();
    m.feat_channels_ = cfg.channels.back();

    std::size_t in_ch = 1;
    for (const std::size_t c : cfg.channels) {
        m.encoder_.push_back(std::make_unique<Conv2d>(in_ch, c, 5, 2, 2));
        m.encoder_.push_back(std::make_unique<ReLU>());
        in_ch = c;
    }

    const std::size_t feat_dim = m.feat_channels_ * m.feat_spatial_ * m.feat_spatial_;
    if (cfg.variant == AeVariant::vq_vae) {
        for (std::size_t i = 0; i < cfg.residual_blocks; ++i) {
            m.encoder_.push_back(std::make_unique<ResidualBlock>(m.feat_channels_));
        }
        m.encoder_.push_back(std::make_unique<Conv2d>(m.feat_channels_, cfg.embed_dim, 1, 1, 0));
        m.decoder_.push_back(std::make_unique<Conv2d>(cfg.embed_dim, m.feat_channels_, 1, 1, 0));
        m.decoder_.push_back(std::make_unique<ReLU>());
        m.codebook_.embeddings = Tensor({cfg.codebook_size, cfg.embed_dim});
        m.codebook_.grad = Tensor({cfg.codebook_size, cfg.embed_dim});
        m.codebook_.commitment = cfg.commitment;
    } else {
        if (cfg.variant == AeVariant::cae) {
            m.latent_head_ = std::make_unique<Dense>(feat_dim, cfg.latent_dim);
        } else {
            m.mu_head_ = std::make_unique<Dense>(feat_dim, cfg.latent_dim);
            m.logvar_head_ = std::make_unique<Dense>(feat_dim, cfg.latent_dim);
        }
        m.dec_in_ = std::make_unique<Dense>(cfg.latent_dim, feat_dim);
        m.dec_in_relu_ = std::make_unique<ReLU>();
    }
    for (std::size_t i = cfg.channels.size(); i-- > 1;) {
        m.decoder_.push_back(std::make_unique<ConvTranspose2d>(cfg.channels[i], cfg.channels[i - 1], 5, 2, 2, 1));
        m.decoder_.push_back(std::make_unique<ReLU>());
    }
    m.decoder_.push_back(std::make_unique<ConvTranspose2d>(cfg.channels.front(), 1, 5, 2, 2, 1));

    Rng rng(derive_seed(seed, 0));
    for (auto& l : m.encoder_) l->init_params(rng);
    if (m.latent_head_) m.latent_head_->init_params(rng);
    if (m.mu_head_) m.mu_head_->init_params(rng);
    if (m.logvar_head_) m.logvar_head_->init_params(rng);
    if (m.dec_in_) m.dec_in_->init_params(rng);
    for (auto& l : m.decoder_) l->init_params(rng);
    if (cfg.variant == AeVariant::vq_vae) {
        const double lim = 1.0 / static_cast<double>(cfg.codebook_size);
        for (std::size_t i = 0; i < m.codebook_.embeddings.size(); ++i) {
            m.codebook_.embeddings[i] = rng.uniform(-lim, lim);
        }
    }
    return m;
}

std::vector<ParamRef> AeModel::params() {
    std::vector<ParamRef> refs;
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
        encoder_[i]->collect_params("encoder." + std::to_string(i) + ".", refs);
    }
    if (latent_head_) latent_head_->collect_params("latent.", refs);
    if (mu_head_) mu_head_->collect_params("mu.", refs);
    if (logvar_head_) logvar_head_->collect_params("logvar.", refs);
    if (dec_in_) dec_in_->collect_params("dec_in.", refs);
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
        decoder_[i]->collect_params("decoder." + std::to_string(i) + ".", refs);
    }
    if (cfg_.variant == AeVariant::vq_vae) {
        refs.push_back({"codebook.embeddings", &codebook_.embeddings, &codebook_.grad});
    }
    return refs;
}

// ------------------------------------------------------------ eval paths

Tensor AeModel::as_batch(const Tensor& patches) const {
    const std::size_t p = cfg_.patch_size;
    if (patches.rank() == 2 && patches.dim(0) == p && patches.dim(1) == p) {
        return patches.reshaped({1, 1, p, p});
    }
    if (patches.rank() == 3 && patches.dim(1) == p && patches.dim(2) == p) {
        return patches.reshaped({patches.dim(0), 1, p, p});
    }
    if (patches.rank() == 4 && patches.dim(1) == 1 && patches.dim(2) == p && patches.dim(3) == p) {
        return patches;
    }
    throw ShapeError("expected patches of spatial size " + std::to_string(p) + "x" + std::to_string(p) +
                     ", got " + Tensor::shape_str(patches.shape()));
}

Tensor AeModel::run_encoder(const Tensor& x) const {
    Tensor f = x;
    for (const auto& l : encoder_) f = l->apply(f);
    return f;
}

Tensor AeModel::clamp_logvar(const Tensor& lv) const {
    Tensor out = lv;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], -10.0, 10.0);
    return out;
}

Tensor AeModel::decode_features(const Tensor& latent) const {
    Tensor d = dec_in_->apply(latent);
    d = dec_in_relu_->apply(d);
    Tensor img = d.reshaped({latent.dim(0), feat_channels_, feat_spatial_, feat_spatial_});
    for (const auto& l : decoder_) img = l->apply(img);
    return img;
}

Tensor AeModel::decode_quantized(const Tensor& q) const {
    Tensor d = q;
    for (const auto& l : decoder_) d = l->apply(d);
    return d;
}

Tensor AeModel::encoder_features(const Tensor& patches) const {
    return run_encoder(as_batch(patches));
}

namespace {

constexpr std::size_t kEvalChunk = 128;

}  // namespace

Tensor AeModel::encode(const Tensor& patches) const {
    const Tensor x = as_batch(patches);
    const std::size_t n = x.dim(0);
    const std::size_t fdim = cfg_.feature_dim();
    Tensor out({n, fdim});
    const std::size_t sample = x.size() / n;
    for (std::size_t lo = 0; lo < n; lo += kEvalChunk) {
        const std::size_t hi = std::min(n, lo + kEvalChunk);
        Tensor chunk = Tensor::from_data(
            {hi - lo, 1, cfg_.patch_size, cfg_.patch_size},
            std::vector<double>(x.data() + lo * sample, x.data() + hi * sample));
        Tensor f = run_encoder(chunk);
        if (cfg_.variant == AeVariant::vq_vae) {
            const QuantizeResult q = vqvae_quantize(f, codebook_);
            const std::size_t plane = f.dim(2) * f.dim(3);
            for (std::size_t r = 0; r < hi - lo; ++r) {
                for (std::size_t b = 0; b < fdim; ++b) {
                    double acc = 0.0;
                    const double* qplane = q.quantized.data() + (r * fdim + b) * plane;
                    for (std::size_t i = 0; i < plane; ++i) acc += qplane[i];
                    out[(lo + r) * fdim + b] = acc / static_cast<double>(plane);
                }
            }
        } else {
            Tensor flat = f.reshaped({hi - lo, feat_channels_ * feat_spatial_ * feat_spatial_});
            const Tensor z = cfg_.variant == AeVariant::cae ? latent_head_->apply(flat) : mu_head_->apply(flat);
            std::copy(z.data(), z.data() + z.size(), out.data() + lo * fdim);
        }
    }
    return out;
}

Tensor AeModel::reconstruct(const Tensor& patches) const {
    const Tensor x = as_batch(patches);
    const std::size_t n = x.dim(0);
    Tensor out(x.shape());
    const std::size_t sample = x.size() / n;
    for (std::size_t lo = 0; lo < n; lo += kEvalChunk) {
        const std::size_t hi = std::min(n, lo + kEvalChunk);
        Tensor chunk = Tensor::from_data(
            {hi - lo, 1, cfg_.patch_size, cfg_.patch_size},
            std::vector<double>(x.data() + lo * sample, x.data() + hi * sample));
        Tensor f = run_encoder(chunk);
        Tensor recon;
        if (cfg_.variant == AeVariant::vq_vae) {
            recon = decode_quantized(vqvae_quantize(f, codebook_).quantized);
        } else {
            Tensor flat = f.reshaped({hi - lo, feat_channels_ * feat_spatial_ * feat_spatial_});
            const Tensor z = cfg_.variant == AeVariant::cae ? latent_head_->apply(flat) : mu_head_->apply(flat);
            recon = decode_features(z);
        }
        std::copy(recon.data(), recon.data() + recon.size(), out.data() + lo * sample);
    }
    return out;
}

double AeModel::anomaly_score(const Tensor& patch, Rng& rng) const {
    const Tensor x = as_batch(patch);
    if (x.dim(0) != 1) throw ShapeError("anomaly_score expects a single patch");
    switch (cfg_.variant) {
        case AeVariant::cae:
        case AeVariant::vq_vae:
            return cae_loss(x, reconstruct(x));
        case AeVariant::beta_vae: {
            Tensor f = run_encoder(x);
            Tensor flat = f.reshaped({1, feat_channels_ * feat_spatial_ * feat_spatial_});
            VaeOutput out;
            out.mu = mu_head_->apply(flat);
            out.logvar = clamp_logvar(logvar_head_->apply(flat));
            out.z = reparameterize(out.mu, out.logvar, rng);
            out.recon = decode_features(out.z);
            return vae_loss(x, out, cfg_.beta).total;
        }
    }
    throw ValueError("unreachable ae variant");
}

std::vector<double> AeModel::anomaly_scores(const Tensor& patches, std::uint64_t score_seed) const {
    const Tensor x = as_batch(patches);
    const std::size_t n = x.dim(0);
    const std::size_t sample = x.size() / n;
    std::vector<double> scores(n, 0.0);
    parallel_for(n, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            Tensor patch = Tensor::from_data(
                {1, 1, cfg_.patch_size, cfg_.patch_size},
                std::vector<double>(x.data() + i * sample, x.data() + (i + 1) * sample));
            Rng rng(derive_seed(score_seed, i));
            scores[i] = anomaly_score(patch, rng);
        }
    });
    return scores;
}

// -------------------------------------------------------------- training

double AeModel::eval_loss(const Tensor& batch, Rng& eps_rng) const {
    const Tensor x = as_batch(batch);
    switch (cfg_.variant) {
        case AeVariant::cae:
            return cae_loss(x, reconstruct(x));
        case AeVariant::beta_vae: {
            Tensor f = run_encoder(x);
            Tensor flat = f.reshaped({x.dim(0), feat_channels_ * feat_spatial_ * feat_spatial_});
            VaeOutput out;
            out.mu = mu_head_->apply(flat);
            out.logvar = clamp_logvar(logvar_head_->apply(flat));
            out.z = reparameterize(out.mu, out.logvar, eps_rng);
            out.recon = decode_features(out.z);
            return vae_loss(x, out, cfg_.beta).total;
        }
        case AeVariant::vq_vae: {
            Tensor f = run_encoder(x);
            const QuantizeResult q = vqvae_quantize(f, codebook_);
            const Tensor recon = decode_quantized(q.quantized);
            return vqvae_loss(x, recon, f, codebook_).total;
        }
    }
    throw ValueError("unreachable ae variant");
}

double AeModel::loss_value(const Tensor& batch, const Tensor* fixed_eps) const {
    const Tensor x = as_batch(batch);
    switch (cfg_.variant) {
        case AeVariant::cae:
            return cae_loss(x, reconstruct(x));
        case AeVariant::vq_vae: {
            Tensor f = run_encoder(x);
            const QuantizeResult q = vqvae_quantize(f, codebook_);
            const Tensor recon = decode_quantized(q.quantized);
            return vqvae_loss(x, recon, f, codebook_).total;
        }
        case AeVariant::beta_vae: {
            if (fixed_eps == nullptr) throw ValueError("beta-vae loss_value requires a fixed eps tensor");
            Tensor f = run_encoder(x);
            Tensor flat = f.reshaped({x.dim(0), feat_channels_ * feat_spatial_ * feat_spatial_});
            VaeOutput out;
            out.mu = mu_head_->apply(flat);
            out.logvar = clamp_logvar(logvar_head_->apply(flat));
            require_same_shape(out.mu, *fixed_eps, "beta-vae fixed eps");
            out.z = Tensor(out.mu.shape());
            for (std::size_t i = 0; i < out.z.size(); ++i) {
                out.z[i] = out.mu[i] + std::exp(0.5 * out.logvar[i]) * (*fixed_eps)[i];
            }
            out.recon = decode_features(out.z);
            return vae_loss(x, out, cfg_.beta).total;
        }
    }
    throw ValueError("unreachable ae variant");
}

double AeModel::compute_gradients(const Tensor& batch, Rng* eps_rng, const Tensor* fixed_eps) {
    const Tensor x = as_batch(batch);
    const std::size_t n = x.dim(0);
    for (auto& r : params()) r.grad->fill(0.0);

    if (cfg_.variant == AeVariant::vq_vae) {
        Tensor f = x;
        for (auto& l : encoder_) f = l->forward(f);
        const QuantizeResult q = vqvae_quantize(f, codebook_);
        Tensor d = q.quantized;
        for (auto& l : decoder_) d = l->forward(d);
        const VqVaeLossTerms terms = vqvae_loss(x, d, f, codebook_);

        Tensor g(d.shape());
        const double rscale = 2.0 / static_cast<double>(d.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = rscale * (d[i] - x[i]);
        for (std::size_t i = decoder_.size(); i-- > 0;) g = decoder_[i]->backward(g);

        // Straight-through: the reconstruction gradient reaches the encoder
        // unchanged; the commitment term adds its pull toward the embeddings.
        const std::size_t positions = f.dim(0) * f.dim(2) * f.dim(3);
        const double lscale = 2.0 / static_cast<double>(positions);
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += cfg_.commitment * lscale * (f[i] - q.quantized[i]);
        }
        // Codebook loss moves only the embeddings.
        const std::size_t plane = f.dim(2) * f.dim(3);
        const std::size_t bc = cfg_.embed_dim;
        for (std::size_t pos = 0; pos < positions; ++pos) {
            const std::size_t img = pos / plane;
            const std::size_t pix = pos % plane;
            const std::size_t k = q.indices[pos];
            for (std::size_t b = 0; b < bc; ++b) {
                const double e = codebook_.embeddings[k * bc + b];
                const double enc = f[img * bc * plane + b * plane + pix];
                codebook_.grad[k * bc + b] += lscale * (e - enc);
            }
        }
        for (std::size_t i = encoder_.size(); i-- > 0;) g = encoder_[i]->backward(g);
        return terms.total;
    }

    Tensor f = x;
    for (auto& l : encoder_) f = l->forward(f);
    const std::size_t feat_dim = feat_channels_ * feat_spatial_ * feat_spatial_;
    Tensor flat = f.reshaped({n, feat_dim});

    if (cfg_.variant == AeVariant::cae) {
        Tensor z = latent_head_->forward(flat);
        Tensor d = dec_in_->forward(z);
        d = dec_in_relu_->forward(d);
        Tensor img = d.reshaped({n, feat_channels_, feat_spatial_, feat_spatial_});
        for (auto& l : decoder_) img = l->forward(img);
        const double loss = cae_loss(x, img);

        Tensor g(img.shape());
        const double scale = 2.0 / static_cast<double>(img.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = scale * (img[i] - x[i]);
        for (std::size_t i = decoder_.size(); i-- > 0;) g = decoder_[i]->backward(g);
        g = g.reshaped({n, feat_dim});
        g = dec_in_relu_->backward(g);
        g = dec_in_->backward(g);
        g = latent_head_->backward(g);
        g = g.reshaped(f.shape());
        for (std::size_t i = encoder_.size(); i-- > 0;) g = encoder_[i]->backward(g);
        return loss;
    }

    // beta-VAE
    Tensor mu = mu_head_->forward(flat);
    Tensor lv_raw = logvar_head_->forward(flat);
    Tensor lv = clamp_logvar(lv_raw);
    Tensor eps({n, cfg_.latent_dim});
    if (fixed_eps) {
        require_same_shape(eps, *fixed_eps, "beta-vae fixed eps");
        eps = *fixed_eps;
    } else {
        for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = eps_rng->normal();
    }
    Tensor z(mu.shape());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = mu[i] + std::exp(0.5 * lv[i]) * eps[i];

    Tensor d = dec_in_->forward(z);
    d = dec_in_relu_->forward(d);
    Tensor img = d.reshaped({n, feat_channels_, feat_spatial_, feat_spatial_});
    for (auto& l : decoder_) img = l->forward(img);

    VaeOutput out;
    out.mu = mu;
    out.logvar = lv;
    out.z = z;
    out.recon = img;
    const VaeLossTerms terms = vae_loss(x, out, cfg_.beta);

    Tensor g(img.shape());
    const double scale = 2.0 / static_cast<double>(img.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = scale * (img[i] - x[i]);
    for (std::size_t i = decoder_.size(); i-- > 0;) g = decoder_[i]->backward(g);
    g = g.reshaped({n, feat_dim});
    g = dec_in_relu_->backward(g);
    Tensor dz = dec_in_->backward(g);

    const double kl_scale = cfg_.beta / static_cast<double>(n);
    Tensor dmu(mu.shape()), dlv(lv.shape());
    for (std::size_t i = 0; i < dz.size(); ++i) {
        dmu[i] = dz[i] + kl_scale * mu[i];
        dlv[i] = dz[i] * 0.5 * std::exp(0.5 * lv[i]) * eps[i] + kl_scale * 0.5 * (std::exp(lv[i]) - 1.0);
        if (lv_raw[i] < -10.0 || lv_raw[i] > 10.0) dlv[i] = 0.0;  // clamp region
    }
    Tensor dflat_mu = mu_head_->backward(dmu);
    Tensor dflat_lv = logvar_head_->backward(dlv);
    for (std::size_t i = 0; i < dflat_mu.size(); ++i) dflat_mu[i] += dflat_lv[i];
    Tensor genc = dflat_mu.reshaped(f.shape());
    for (std::size_t i = encoder_.size(); i-- > 0;) genc = encoder_[i]->backward(genc);
    return terms.total;
}

double AeModel::train_step(const Tensor& batch, AdamOptimizer& opt, Rng& eps_rng) {
    const double loss = compute_gradients(batch, &eps_rng, nullptr);
    opt.step();
    return loss;
}

AeTrainConfig AeTrainConfig::defaults_for(AeVariant v) {
    AeTrainConfig cfg;
    if (v == AeVariant::vq_vae) {
        cfg.epochs = 20;
        cfg.lr = 1e-4;
    } else {
        cfg.epochs = 100;
        cfg.lr = 1e-5;
    }
    cfg.batch_size = 64;
    return cfg;
}

namespace {

// Rows of a patch tensor (N x P x P or N x 1 x P x P) gathered into a batch.
Tensor gather_batch(const Tensor& patches, const std::vector<std::size_t>& order, std::size_t lo,
                    std::size_t hi, std::size_t patch_size) {
    const std::size_t sample = patch_size * patch_size;
    Tensor batch({hi - lo, 1, patch_size, patch_size});
    for (std::size_t i = lo; i < hi; ++i) {
        const double* src = patches.data() + order[i] * sample;
        std::copy(src, src + sample, batch.data() + (i - lo) * sample);
    }
    return batch;
}

std::size_t patch_count(const Tensor& patches, std::size_t patch_size, const char* what) {
    const std::size_t sample = patch_size * patch_size;
    if (patches.size() == 0 || patches.size() % sample != 0) {
        throw ShapeError(std::string(what) + ": tensor " + Tensor::shape_str(patches.shape()) +
                         " is not a stack of " + std::to_string(patch_size) + "x" +
                         std::to_string(patch_size) + " patches");
    }
    return patches.size() / sample;
}

}  // namespace

AeTrainTrace train_ae(AeModel& model, const Tensor& train_patches, const Tensor& val_patches,
                      const AeTrainConfig& cfg) {
    if (cfg.epochs == 0) throw ValueError("train_ae: epochs must be >= 1");
    const std::size_t p = model.config().patch_size;
    const std::size_t n_train = patch_count(train_patches, p, "train_ae train set");
    const std::size_t n_val = val_patches.size() == 0 ? 0 : patch_count(val_patches, p, "train_ae val set");
    if (n_train == 0) throw ValueError("train_ae: empty training set");

    AdamOptimizer opt({cfg.lr, 0.9, 0.999, 1e-8}, model.params());
    AeTrainTrace trace;

    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::size_t> val_order(n_val);
    std::iota(val_order.begin(), val_order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::uint64_t epoch_seed = derive_seed(cfg.seed, epoch);
        Rng shuffle_rng(derive_seed(epoch_seed, 0));
        for (std::size_t i = n_train; i > 1; --i) {
            std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
        }
        double loss_sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t lo = 0; lo < n_train; lo += cfg.batch_size, ++batch_index) {
            const std::size_t hi = std::min(n_train, lo + cfg.batch_size);
            Tensor batch = gather_batch(train_patches, order, lo, hi, p);
            Rng eps_rng(derive_seed(epoch_seed, 1 + batch_index));
            const double loss = model.train_step(batch, opt, eps_rng);
            if (!std::isfinite(loss)) {
                throw NumericalError("training diverged (non-finite loss) at epoch " +
                                     std::to_string(epoch) + " batch " + std::to_string(batch_index));
            }
            loss_sum += loss * static_cast<double>(hi - lo);
        }
        trace.train_loss.push_back(loss_sum / static_cast<double>(n_train));

        if (n_val > 0) {
            Rng val_rng(derive_seed(epoch_seed, 999999937));
            double val_sum = 0.0;
            for (std::size_t lo = 0; lo < n_val; lo += cfg.batch_size) {
                const std::size_t hi = std::min(n_val, lo + cfg.batch_size);
                Tensor batch = gather_batch(val_patches, val_order, lo, hi, p);
                val_sum += model.eval_loss(batch, val_rng) * static_cast<double>(hi - lo);
            }
            trace.val_loss.push_back(val_sum / static_cast<double>(n_val));
        } else {
            trace.val_loss.push_back(std::numeric_limits<double>::quiet_NaN());
        }
    }
    return trace;
}

void write_train_trace_csv(const std::filesystem::path& path, const AeTrainTrace& trace) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "epoch,train_loss,val_loss\n";
    char buf[64];
    for (std::size_t e = 0; e < trace.train_loss.size(); ++e) {
        os << (e + 1) << ',';
        std::snprintf(buf, sizeof buf, "%.17g", trace.train_loss[e]);
        os << buf << ',';
        std::snprintf(buf, sizeof buf, "%.17g", trace.val_loss[e]);
        os << buf << '\n';
    }
}

// ----------------------------------------------------------- persistence

namespace {

std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(v[i]);
    }
    return s;
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(static_cast<std::size_t>(std::stoull(item)));
    }
    return out;
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void AeModel::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "AEMODEL v1\n";
    os << "variant=" << ae_variant_name(cfg_.variant) << "\n";
    os << "patch_size=" << cfg_.patch_size << "\n";
    os << "channels=" << join_sizes(cfg_.channels) << "\n";
    os << "latent_dim=" << cfg_.latent_dim << "\n";
    os << "beta=" << fmt_double(cfg_.beta) << "\n";
    os << "codebook_size=" << cfg_.codebook_size << "\n";
    os << "embed_dim=" << cfg_.embed_dim << "\n";
    os << "commitment=" << fmt_double(cfg_.commitment) << "\n";
    os << "residual_blocks=" << cfg_.residual_blocks << "\n";
    os << "end-header\n";
    auto refs = const_cast<AeModel*>(this)->params();
    for (const auto& r : refs) write_named_tensor(os, r.name, *r.value, DType::f64);
    if (!os) throw IoError("failed while writing model checkpoint " + path.string());
}

AeModel AeModel::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path.string());
    std::string line;
    if (!std::getline(is, line) || line != "AEMODEL v1") {
        throw IoError("not an AEMODEL v1 checkpoint: " + path.string());
    }
    AeConfig cfg;
    while (std::getline(is, line)) {
        if (line == "end-header") break;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw IoError("malformed checkpoint header line: " + line);
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "variant") cfg.variant = ae_variant_from_string(val);
        else if (key == "patch_size") cfg.patch_size = std::stoull(val);
        else if (key == "channels") cfg.channels = parse_sizes(val);
        else if (key == "latent_dim") cfg.latent_dim = std::stoull(val);
        else if (key == "beta") cfg.beta = std::stod(val);
        else if (key == "codebook_size") cfg.codebook_size = std::stoull(val);
        else if (key == "embed_dim") cfg.embed_dim = std::stoull(val);
        else if (key == "commitment") cfg.commitment = std::stod(val);
        else if (key == "residual_blocks") cfg.residual_blocks = std::stoull(val);
        else throw IoError("unknown checkpoint header key: " + key);
    }
    AeModel model = build(cfg, 0);
    auto refs = model.params();
    std::map<std::string, ParamRef*> by_name;
    for (auto& r : refs) by_name[r.name] = &r;
    std::size_t loaded = 0;
    while (loaded < refs.size()) {
        auto [name, tensor] = read_named_tensor(is);
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw IoError("unexpected tensor record '" + name + "' in " + path.string());
        if (it->second->value->shape() != tensor.shape()) {
            throw IoError("tensor record '" + name + "' has shape " + Tensor::shape_str(tensor.shape()) +
                          ", model expects " + Tensor::shape_str(it->second->value->shape()));
        }
        *it->second->value = std::move(tensor);
        ++loaded;
    }
    return model;
}

}  // namespace patchspn
