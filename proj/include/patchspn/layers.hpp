#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "patchspn/rng.hpp"
#include "patchspn/tensor.hpp"

namespace patchspn {

enum class LayerKind { conv2d, conv_transpose2d, dense, relu, residual_block };

const char* layer_kind_name(LayerKind k);

struct ParamRef {
    std::string name;
    Tensor* value;
    Tensor* grad;
};

// A trainable layer with an analytic backward pass. apply() is the pure
// evaluation path and is safe to call concurrently on a frozen layer;
// forward()/backward() cache activations and are single-writer.
class Layer {
public:
    virtual ~Layer() = default;

    virtual LayerKind kind() const = 0;
    virtual std::vector<std::size_t> output_shape(const std::vector<std::size_t>& input) const = 0;

    virtual Tensor apply(const Tensor& input) const = 0;

    virtual Tensor forward(const Tensor& input) {
        input_cache_ = input;
        has_cache_ = true;
        return apply(input);
    }

    // Gradient wrt the cached forward input; parameter gradients accumulate.
    virtual Tensor backward(const Tensor& upstream) = 0;

    virtual void collect_params(const std::string& /*prefix*/, std::vector<ParamRef>& /*out*/) {}
    virtual void init_params(Rng& /*rng*/) {}
    void zero_grads();
    virtual void clear_cache() {
        input_cache_ = Tensor();
        has_cache_ = false;
    }

protected:
    const Tensor& cached_input() const;

    Tensor input_cache_;
    bool has_cache_ = false;
};

// Uniform init in +-sqrt(6 / (fan_in + fan_out)); biases stay zero.
void glorot_uniform(Tensor& w, std::size_t fan_in, std::size_t fan_out, Rng& rng);

std::size_t conv_output_dim(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

// 2-D convolution on N x C x H x W, weight out_ch x in_ch x k x k.
class Conv2d final : public Layer {
public:
    Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride, std::size_t pad);

    LayerKind kind() const override { return LayerKind::conv2d; }
    std::vector<std::size_t> output_shape(const std::vector<std::size_t>& input) const override;
    Tensor apply(const Tensor& input) const override;
    Tensor backward(const Tensor& upstream) override;
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
    void init_params(Rng& rng) override;

    std::size_t in_channels() const { return in_ch_; }
    std::size_t out_channels() const { return out_ch_; }

    Tensor weight, bias, weight_grad, bias_grad;

private:
    std::size_t in_ch_, out_ch_, kernel_, stride_, pad_;
};

// Transposed 2-D convolution, weight in_ch x out_ch x k x k. output_padding
// grows the bottom/right edge; out = (in-1)*stride - 2*pad + k + output_padding.
class ConvTranspose2d final : public Layer {
public:
    ConvTranspose2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
                    std::size_t pad, std::size_t output_pad);

    LayerKind kind() const override { return LayerKind::conv_transpose2d; }
    std::vector<std::size_t> output_shape(const std::vector<std::size_t>& input) const override;
    Tensor apply(const Tensor& input) const override;
    Tensor backward(const Tensor& upstream) override;
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
    void init_params(Rng& rng) override;

    Tensor weight, bias, weight_grad, bias_grad;

private:
    std::size_t in_ch_, out_ch_, kernel_, stride_, pad_, out_pad_;
};

// Fully connected layer on N x F, weight out_f x in_f.
class Dense final : public Layer {
public:
    Dense(std::size_t in_features, std::size_t out_features);

    LayerKind kind() const override { return LayerKind::dense; }
    std::vector<std::size_t> output_shape(const std::vector<std::size_t>& input) const override;
    Tensor apply(const Tensor& input) const override;
    Tensor backward(const Tensor& upstream) override;
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
    void init_params(Rng& rng) override;

    std::size_t in_features() const { return in_f_; }
    std::size_t out_features() const { return out_f_; }

    Tensor weight, bias, weight_grad, bias_grad;

private:
    std::size_t in_f_, out_f_;
};

class ReLU final : public Layer {
public:
    LayerKind kind() const override { return LayerKind::relu; }
    std::vector<std::size_t> output_shape(const std::vector<std::size_t>& input) const override { return input; }
    Tensor apply(const Tensor& input) const override;
    Tensor backward(const Tensor& upstream) override;
};

// x + conv2(relu(conv1(x))), both convs 3x3 stride 1 pad 1, channel-preserving.
class ResidualBlock final : public Layer {
public:
    explicit ResidualBlock(std::size_t channels);

    LayerKind kind() const override { return LayerKind::residual_block; }
    std::vector<std::size_t> output_shape(const std::vector<std::size_t>& input) const override;
    Tensor apply(const Tensor& input) const override;
    Tensor forward(const Tensor& input) override;
    Tensor backward(const Tensor& upstream) override;
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
    void init_params(Rng& rng) override;
    void clear_cache() override;

    Conv2d conv1, conv2;

private:
    Tensor pre_act_;  // conv1 output before the relu
};

// Max over all parameter and input entries of the relative disagreement
// between the analytic gradient and a central finite difference of the
// scalar probe sum(forward(x) * u) with fixed random u.
double grad_check(Layer& layer, const Tensor& input, double eps, std::uint64_t probe_seed = 7);

}  // namespace patchspn
