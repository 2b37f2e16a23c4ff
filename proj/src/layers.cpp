#include "patchspn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "patchspn/errors.hpp"
#include "patchspn/parallel.hpp"

namespace patchspn {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::conv_transpose2d: return "conv_transpose2d";
        case LayerKind::dense: return "dense";
        case LayerKind::relu: return "relu";
        case LayerKind::residual_block: return "residual_block";
    }
    return "?";
}

void Layer::zero_grads() {
    std::vector<ParamRef> refs;
    collect_params("", refs);
    for (auto& r : refs) r.grad->fill(0.0);
}

const Tensor& Layer::cached_input() const {
    if (!has_cache_) {
        throw ValueError(std::string("backward on ") + layer_kind_name(kind()) +
                         " before a matching forward (missing cached activations)");
    }
    return input_cache_;
}

void glorot_uniform(Tensor& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-limit, limit);
}

std::size_t conv_output_dim(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
    if (in + 2 * pad < kernel) {
        throw ShapeError("conv input dim " + std::to_string(in) + " too small for kernel " +
                         std::to_string(kernel) + " with pad " + std::to_string(pad));
    }
    return (in + 2 * pad - kernel) / stride + 1;
}

namespace {

void require_rank4(const Tensor& t, std::size_t channels, const char* what) {
    if (t.rank() != 4 || t.dim(1) != channels) {
        throw ShapeError(std::string(what) + ": expected (N, " + std::to_string(channels) +
                         ", H, W), got " + Tensor::shape_str(t.shape()));
    }
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride, std::size_t pad)
    : weight({out_ch, in_ch, kernel, kernel}),
      bias({out_ch}),
      weight_grad({out_ch, in_ch, kernel, kernel}),
      bias_grad({out_ch}),
      in_ch_(in_ch),
      out_ch_(out_ch),
      kernel_(kernel),
      stride_(stride),
      pad_(pad) {
    if (stride == 0 || kernel == 0) throw ValueError("conv2d stride/kernel must be positive");
}

std::vector<std::size_t> Conv2d::output_shape(const std::vector<std::size_t>& in) const {
    if (in.size() != 4 || in[1] != in_ch_) {
        throw ShapeError("conv2d: expected (N, " + std::to_string(in_ch_) + ", H, W), got " +
                         Tensor::shape_str(in));
    }
    return {in[0], out_ch_, conv_output_dim(in[2], kernel_, stride_, pad_),
            conv_output_dim(in[3], kernel_, stride_, pad_)};
}

Tensor Conv2d::apply(const Tensor& x) const {
    const auto oshape = output_shape(x.shape());
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = oshape[2], ow = oshape[3];
    Tensor out(oshape);
    const double* xd = x.data();
    const double* wd = weight.data();
    double* od = out.data();
    const std::size_t k = kernel_, s = stride_, p = pad_;

    parallel_for(n * out_ch_, [&](std::size_t b, std::size_t e) {
        for (std::size_t plane = b; plane < e; ++plane) {
            const std::size_t img = plane / out_ch_;
            const std::size_t oc = plane % out_ch_;
            double* oplane = od + plane * oh * ow;
            const double bval = bias[oc];
            for (std::size_t oy = 0; oy < oh; ++oy) {
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    double acc = bval;
                    for (std::size_t ic = 0; ic < in_ch_; ++ic) {
                        const double* xplane = xd + (img * in_ch_ + ic) * h * w;
                        const double* wslice = wd + (oc * in_ch_ + ic) * k * k;
                        for (std::size_t ky = 0; ky < k; ++ky) {
                            const std::ptrdiff_t iy =
                                static_cast<std::ptrdiff_t>(oy * s + ky) - static_cast<std::ptrdiff_t>(p);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const std::ptrdiff_t ix =
                                    static_cast<std::ptrdiff_t>(ox * s + kx) - static_cast<std::ptrdiff_t>(p);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                acc += wslice[ky * k + kx] * xplane[iy * static_cast<std::ptrdiff_t>(w) + ix];
                            }
                        }
                    }
                    oplane[oy * ow + ox] = acc;
                }
            }
        }
    });
    return out;
}

Tensor Conv2d::backward(const Tensor& g) {
    const Tensor& x = cached_input();
    const auto oshape = output_shape(x.shape());
    if (g.shape() != oshape) {
        throw ShapeError("conv2d backward: expected upstream " + Tensor::shape_str(oshape) + ", got " +
                         Tensor::shape_str(g.shape()));
    }
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = oshape[2], ow = oshape[3];
    const std::size_t k = kernel_, s = stride_, p = pad_;
    const double* xd = x.data();
    const double* gd = g.data();
    const double* wd = weight.data();

    // Per-(oc) slices: deterministic sums independent of the thread count.
    parallel_for(out_ch_, [&](std::size_t b, std::size_t e) {
        for (std::size_t oc = b; oc < e; ++oc) {
            double bacc = 0.0;
            for (std::size_t img = 0; img < n; ++img) {
                const double* gplane = gd + (img * out_ch_ + oc) * oh * ow;
                for (std::size_t i = 0; i < oh * ow; ++i) bacc += gplane[i];
            }
            bias_grad[oc] += bacc;

            double* wgslice = weight_grad.data() + oc * in_ch_ * k * k;
            for (std::size_t ic = 0; ic < in_ch_; ++ic) {
                for (std::size_t ky = 0; ky < k; ++ky) {
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        double acc = 0.0;
                        for (std::size_t img = 0; img < n; ++img) {
                            const double* gplane = gd + (img * out_ch_ + oc) * oh * ow;
                            const double* xplane = xd + (img * in_ch_ + ic) * h * w;
                            for (std::size_t oy = 0; oy < oh; ++oy) {
                                const std::ptrdiff_t iy =
                                    static_cast<std::ptrdiff_t>(oy * s + ky) - static_cast<std::ptrdiff_t>(p);
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                                const double* xrow = xplane + iy * static_cast<std::ptrdiff_t>(w);
                                const double* grow = gplane + oy * ow;
                                for (std::size_t ox = 0; ox < ow; ++ox) {
                                    const std::ptrdiff_t ix =
                                        static_cast<std::ptrdiff_t>(ox * s + kx) - static_cast<std::ptrdiff_t>(p);
                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                    acc += grow[ox] * xrow[ix];
                                }
                            }
                        }
                        wgslice[(ic * k + ky) * k + kx] += acc;
                    }
                }
            }
        }
    });

    Tensor dx(x.shape());
    double* dxd = dx.data();
    parallel_for(n * in_ch_, [&](std::size_t b, std::size_t e) {
        for (std::size_t plane = b; plane < e; ++plane) {
            const std::size_t img = plane / in_ch_;
            const std::size_t ic = plane % in_ch_;
            double* dxplane = dxd + plane * h * w;
            for (std::size_t oc = 0; oc < out_ch_; ++oc) {
                const double* gplane = gd + (img * out_ch_ + oc) * oh * ow;
                const double* wslice = wd + (oc * in_ch_ + ic) * k * k;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const double gval = gplane[oy * ow + ox];
                        if (gval == 0.0) continue;
                        for (std::size_t ky = 0; ky < k; ++ky) {
                            const std::ptrdiff_t iy =
                                static_cast<std::ptrdiff_t>(oy * s + ky) - static_cast<std::ptrdiff_t>(p);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            double* dxrow = dxplane + iy * static_cast<std::ptrdiff_t>(w);
                            const double* wrow = wslice + ky * k;
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const std::ptrdiff_t ix =
                                    static_cast<std::ptrdiff_t>(ox * s + kx) - static_cast<std::ptrdiff_t>(p);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                dxrow[ix] += gval * wrow[kx];
                            }
                        }
                    }
                }
            }
        }
    });
    return dx;
}

void Conv2d::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + "weight", &weight, &weight_grad});
    out.push_back({prefix + "bias", &bias, &bias_grad});
}

void Conv2d::init_params(Rng& rng) {
    glorot_uniform(weight, in_ch_ * kernel_ * kernel_, out_ch_ * kernel_ * kernel_, rng);
    bias.fill(0.0);
}

// ------------------------------------------------------- ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                                 std::size_t stride, std::size_t pad, std::size_t output_pad)
    : weight({in_ch, out_ch, kernel, kernel}),
      bias({out_ch}),
      weight_grad({in_ch, out_ch, kernel, kernel}),
      bias_grad({out_ch}),
      in_ch_(in_ch),
      out_ch_(out_ch),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      out_pad_(output_pad) {
    if (stride == 0 || kernel == 0) throw ValueError("conv_transpose2d stride/kernel must be positive");
    if (output_pad >= stride) throw ValueError("conv_transpose2d output_padding must be < stride");
}

std::vector<std::size_t> ConvTranspose2d::output_shape(const std::vector<std::size_t>& in) const {
    if (in.size() != 4 || in[1] != in_ch_) {
        throw ShapeError("conv_transpose2d: expected (N, " + std::to_string(in_ch_) + ", H, W), got " +
                         Tensor::shape_str(in));
    }
    const std::size_t grown_h = (in[2] - 1) * stride_ + kernel_ + out_pad_;
    const std::size_t grown_w = (in[3] - 1) * stride_ + kernel_ + out_pad_;
    if (grown_h < 2 * pad_ || grown_w < 2 * pad_) {
        throw ShapeError("conv_transpose2d: padding " + std::to_string(pad_) + " swallows the whole output");
    }
    return {in[0], out_ch_, grown_h - 2 * pad_, grown_w - 2 * pad_};
}

Tensor ConvTranspose2d::apply(const Tensor& x) const {
    const auto oshape = output_shape(x.shape());
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = oshape[2], ow = oshape[3];
    const std::size_t k = kernel_, s = stride_, p = pad_;
    Tensor out(oshape);
    const double* xd = x.data();
    const double* wd = weight.data();
    double* od = out.data();

    // Scatter from inputs; each worker owns whole (img, oc) output planes.
    parallel_for(n * out_ch_, [&](std::size_t b, std::size_t e) {
        for (std::size_t plane = b; plane < e; ++plane) {
            const std::size_t img = plane / out_ch_;
            const std::size_t oc = plane % out_ch_;
            double* oplane = od + plane * oh * ow;
            const double bval = bias[oc];
            for (std::size_t i = 0; i < oh * ow; ++i) oplane[i] = bval;
            for (std::size_t ic = 0; ic < in_ch_; ++ic) {
                const double* xplane = xd + (img * in_ch_ + ic) * h * w;
                const double* wslice = wd + (ic * out_ch_ + oc) * k * k;
                for (std::size_t iy = 0; iy < h; ++iy) {
                    for (std::size_t ix = 0; ix < w; ++ix) {
                        const double xval = xplane[iy * w + ix];
                        if (xval == 0.0) continue;
                        for (std::size_t ky = 0; ky < k; ++ky) {
                            const std::ptrdiff_t oy =
                                static_cast<std::ptrdiff_t>(iy * s + ky) - static_cast<std::ptrdiff_t>(p);
                            if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(oh)) continue;
                            double* orow = oplane + oy * static_cast<std::ptrdiff_t>(ow);
                            const double* wrow = wslice + ky * k;
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const std::ptrdiff_t ox =
                                    static_cast<std::ptrdiff_t>(ix * s + kx) - static_cast<std::ptrdiff_t>(p);
                                if (ox < 0 || ox >= static_cast<std::ptrdiff_t>(ow)) continue;
                                orow[ox] += xval * wrow[kx];
                            }
                        }
                    }
                }
            }
        }
    });
    return out;
}

Tensor ConvTranspose2d::backward(const Tensor& g) {
    const Tensor& x = cached_input();
    const auto oshape = output_shape(x.shape());
    if (g.shape() != oshape) {
        throw ShapeError("conv_transpose2d backward: expected upstream " + Tensor::shape_str(oshape) +
                         ", got " + Tensor::shape_str(g.shape()));
    }
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = oshape[2], ow = oshape[3];
    const std::size_t k = kernel_, s = stride_, p = pad_;
    const double* xd = x.data();
    const double* gd = g.data();
    const double* wd = weight.data();

    parallel_for(out_ch_, [&](std::size_t b, std::size_t e) {
        for (std::size_t oc = b; oc < e; ++oc) {
            double bacc = 0.0;
            for (std::size_t img = 0; img < n; ++img) {
                const double* gplane = gd + (img * out_ch_ + oc) * oh * ow;
                for (std::size_t i = 0; i < oh * ow; ++i) bacc += gplane[i];
            }
            bias_grad[oc] += bacc;

            for (std::size_t ic = 0; ic < in_ch_; ++ic) {
                double* wgslice = weight_grad.data() + (ic * out_ch_ + oc) * k * k;
                for (std::size_t ky = 0; ky < k; ++ky) {
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        double acc = 0.0;
                        for (std::size_t img = 0; img < n; ++img) {
                            const double* xplane = xd + (img * in_ch_ + ic) * h * w;
                            const double* gplane = gd + (img * out_ch_ + oc) * oh * ow;
                            for (std::size_t iy = 0; iy < h; ++iy) {
                                const std::ptrdiff_t oy =
                                    static_cast<std::ptrdiff_t>(iy * s + ky) - static_cast<std::ptrdiff_t>(p);
                                if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(oh)) continue;
                                const double* grow = gplane + oy * static_cast<std::ptrdiff_t>(ow);
                                const double* xrow = xplane + iy * w;
                                for (std::size_t ix = 0; ix < w; ++ix) {
                                    const std::ptrdiff_t ox =
                                        static_cast<std::ptrdiff_t>(ix * s + kx) - static_cast<std::ptrdiff_t>(p);
                                    if (ox < 0 || ox >= static_cast<std::ptrdiff_t>(ow)) continue;
                                    acc += xrow[ix] * grow[ox];
                                }
                            }
                        }
                        wgslice[ky * k + kx] += acc;
                    }
                }
            }
        }
    });

    Tensor dx(x.shape());
    double* dxd = dx.data();
    parallel_for(n * in_ch_, [&](std::size_t b, std::size_t e) {
        for (std::size_t plane = b; plane < e; ++plane) {
            const std::size_t img = plane / in_ch_;
            const std::size_t ic = plane % in_ch_;
            double* dxplane = dxd + plane * h * w;
            for (std::size_t iy = 0; iy < h; ++iy) {
                for (std::size_t ix = 0; ix < w; ++ix) {
                    double acc = 0.0;
                    for (std::size_t oc = 0; oc < out_ch_; ++oc) {
                        const double* gplane = gd + (img * out_ch_ + oc) * oh * ow;
                        const double* wslice = wd + (ic * out_ch_ + oc) * k * k;
                        for (std::size_t ky = 0; ky < k; ++ky) {
                            const std::ptrdiff_t oy =
                                static_cast<std::ptrdiff_t>(iy * s + ky) - static_cast<std::ptrdiff_t>(p);
                            if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(oh)) continue;
                            const double* grow = gplane + oy * static_cast<std::ptrdiff_t>(ow);
                            const double* wrow = wslice + ky * k;
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const std::ptrdiff_t ox =
                                    static_cast<std::ptrdiff_t>(ix * s + kx) - static_cast<std::ptrdiff_t>(p);
                                if (ox < 0 || ox >= static_cast<std::ptrdiff_t>(ow)) continue;
                                acc += grow[ox] * wrow[kx];
                            }
                        }
                    }
                    dxplane[iy * w + ix] = acc;
                }
            }
        }
    });
    return dx;
}

void ConvTranspose2d::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + "weight", &weight, &weight_grad});
    out.push_back({prefix + "bias", &bias, &bias_grad});
}

void ConvTranspose2d::init_params(Rng& rng) {
    glorot_uniform(weight, in_ch_ * kernel_ * kernel_, out_ch_ * kernel_ * kernel_, rng);
    bias.fill(0.0);
}

// ----------------------------------------------------------------- Dense

Dense::Dense(std::size_t in_features, std::size_t out_features)
    : weight({out_features, in_features}),
      bias({out_features}),
      weight_grad({out_features, in_features}),
      bias_grad({out_features}),
      in_f_(in_features),
      out_f_(out_features) {}

std::vector<std::size_t> Dense::output_shape(const std::vector<std::size_t>& in) const {
    if (in.size() != 2 || in[1] != in_f_) {
        throw ShapeError("dense: expected (N, " + std::to_string(in_f_) + "), got " + Tensor::shape_str(in));
    }
    return {in[0], out_f_};
}

Tensor Dense::apply(const Tensor& x) const {
    const auto oshape = output_shape(x.shape());
    const std::size_t n = x.dim(0);
    Tensor out(oshape);
    const double* xd = x.data();
    const double* wd = weight.data();
    double* od = out.data();
    parallel_for(n, [&](std::size_t b, std::size_t e) {
        for (std::size_t r = b; r < e; ++r) {
            const double* xrow = xd + r * in_f_;
            double* orow = od + r * out_f_;
            for (std::size_t o = 0; o < out_f_; ++o) {
                const double* wrow = wd + o * in_f_;
                double acc = bias[o];
                for (std::size_t i = 0; i < in_f_; ++i) acc += wrow[i] * xrow[i];
                orow[o] = acc;
            }
        }
    });
    return out;
}

Tensor Dense::backward(const Tensor& g) {
    const Tensor& x = cached_input();
    const auto oshape = output_shape(x.shape());
    if (g.shape() != oshape) {
        throw ShapeError("dense backward: expected upstream " + Tensor::shape_str(oshape) + ", got " +
                         Tensor::shape_str(g.shape()));
    }
    const std::size_t n = x.dim(0);
    const double* xd = x.data();
    const double* gd = g.data();
    parallel_for(out_f_, [&](std::size_t b, std::size_t e) {
        for (std::size_t o = b; o < e; ++o) {
            double* wgrow = weight_grad.data() + o * in_f_;
            double bacc = 0.0;
            for (std::size_t r = 0; r < n; ++r) {
                const double go = gd[r * out_f_ + o];
                bacc += go;
                if (go == 0.0) continue;
                const double* xrow = xd + r * in_f_;
                for (std::size_t i = 0; i < in_f_; ++i) wgrow[i] += go * xrow[i];
            }
            bias_grad[o] += bacc;
        }
    });

    Tensor dx(x.shape());
    double* dxd = dx.data();
    const double* wd = weight.data();
    parallel_for(n, [&](std::size_t b, std::size_t e) {
        for (std::size_t r = b; r < e; ++r) {
            double* dxrow = dxd + r * in_f_;
            const double* grow = gd + r * out_f_;
            for (std::size_t o = 0; o < out_f_; ++o) {
                const double go = grow[o];
                if (go == 0.0) continue;
                const double* wrow = wd + o * in_f_;
                for (std::size_t i = 0; i < in_f_; ++i) dxrow[i] += go * wrow[i];
            }
        }
    });
    return dx;
}

void Dense::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + "weight", &weight, &weight_grad});
    out.push_back({prefix + "bias", &bias, &bias_grad});
}

void Dense::init_params(Rng& rng) {
    glorot_uniform(weight, in_f_, out_f_, rng);
    bias.fill(0.0);
}

// ------------------------------------------------------------------ ReLU

Tensor ReLU::apply(const Tensor& x) const {
    Tensor out = x;
    double* d = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) d[i] = d[i] > 0.0 ? d[i] : 0.0;
    return out;
}

Tensor ReLU::backward(const Tensor& g) {
    const Tensor& x = cached_input();
    if (!g.same_shape(x)) {
        throw ShapeError("relu backward: expected upstream " + Tensor::shape_str(x.shape()) + ", got " +
                         Tensor::shape_str(g.shape()));
    }
    Tensor dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i)
        if (x[i] <= 0.0) dx[i] = 0.0;
    return dx;
}

// --------------------------------------------------------- ResidualBlock

ResidualBlock::ResidualBlock(std::size_t channels)
    : conv1(channels, channels, 3, 1, 1), conv2(channels, channels, 3, 1, 1) {}

std::vector<std::size_t> ResidualBlock::output_shape(const std::vector<std::size_t>& in) const {
    if (in.size() != 4 || in[1] != conv1.in_channels()) {
        throw ShapeError("residual_block: expected (N, " + std::to_string(conv1.in_channels()) +
                         ", H, W), got " + Tensor::shape_str(in));
    }
    return in;
}

Tensor ResidualBlock::apply(const Tensor& x) const {
    require_rank4(x, conv1.in_channels(), "residual_block");
    Tensor h = conv1.apply(x);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = h[i] > 0.0 ? h[i] : 0.0;
    Tensor y = conv2.apply(h);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
    return y;
}

Tensor ResidualBlock::forward(const Tensor& x) {
    require_rank4(x, conv1.in_channels(), "residual_block");
    input_cache_ = x;
    has_cache_ = true;
    pre_act_ = conv1.forward(x);
    Tensor r = pre_act_;
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = r[i] > 0.0 ? r[i] : 0.0;
    Tensor y = conv2.forward(r);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
    return y;
}

Tensor ResidualBlock::backward(const Tensor& g) {
    const Tensor& x = cached_input();
    if (!g.same_shape(x)) {
        throw ShapeError("residual_block backward: expected upstream " + Tensor::shape_str(x.shape()) +
                         ", got " + Tensor::shape_str(g.shape()));
    }
    Tensor dr = conv2.backward(g);
    for (std::size_t i = 0; i < dr.size(); ++i)
        if (pre_act_[i] <= 0.0) dr[i] = 0.0;
    Tensor dx = conv1.backward(dr);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i];
    return dx;
}

void ResidualBlock::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    conv1.collect_params(prefix + "conv1.", out);
    conv2.collect_params(prefix + "conv2.", out);
}

void ResidualBlock::init_params(Rng& rng) {
    conv1.init_params(rng);
    conv2.init_params(rng);
}

void ResidualBlock::clear_cache() {
    Layer::clear_cache();
    pre_act_ = Tensor();
    conv1.clear_cache();
    conv2.clear_cache();
}

// ------------------------------------------------------------ grad_check

double grad_check(Layer& layer, const Tensor& input, double eps, std::uint64_t probe_seed) {
    if (!(eps > 0.0 && eps <= 1e-2)) throw ValueError("grad_check eps must be in (0, 1e-2]");

    Rng rng(probe_seed);
    const auto oshape = layer.output_shape(input.shape());
    Tensor probe(oshape);
    for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = rng.uniform(-1.0, 1.0);

    const auto objective = [&](const Tensor& x) {
        const Tensor out = layer.apply(x);
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * probe[i];
        return s;
    };

    layer.zero_grads();
    layer.forward(input);
    Tensor input_grad = layer.backward(probe);

    std::vector<ParamRef> refs;
    layer.collect_params("", refs);

    double worst = 0.0;
    const auto check_entry = [&](double analytic, double* slot) {
        const double saved = *slot;
        *slot = saved + eps;
        const double hi = objective(input);
        *slot = saved - eps;
        const double lo = objective(input);
        *slot = saved;
        const double numeric = (hi - lo) / (2.0 * eps);
        const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-12});
        worst = std::max(worst, std::fabs(analytic - numeric) / denom);
    };

    for (auto& r : refs) {
        for (std::size_t i = 0; i < r.value->size(); ++i) check_entry((*r.grad)[i], &(*r.value)[i]);
    }
    Tensor x = input;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + eps;
        const double hi = objective(x);
        x[i] = saved - eps;
        const double lo = objective(x);
        x[i] = saved;
        const double numeric = (hi - lo) / (2.0 * eps);
        const double analytic = input_grad[i];
        const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-12});
        worst = std::max(worst, std::fabs(analytic - numeric) / denom);
    }
    return worst;
}

}  // namespace patchspn
