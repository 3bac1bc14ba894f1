#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "error.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace stvm {

enum class ParamGroup { feature_extractor, classifier, metric_head };

inline const char* group_name(ParamGroup g) {
    switch (g) {
    case ParamGroup::feature_extractor: return "feature_extractor";
    case ParamGroup::classifier: return "classifier";
    case ParamGroup::metric_head: return "metric_head";
    }
    return "?";
}

/// Shape of the reference "TinySeg" network. Four 3×3 conv blocks (the first
/// and third with stride 2) produce `feature_dim` channels at stride 4; the
/// classifier and the metric head are each two 1×1 convolutions.
struct ArchConfig {
    int num_classes = 6;
    int feature_dim = 64;
    int metric_dim = 128;
    int base_width = 16;

    static constexpr int stride = 4;

    void validate() const {
        if (num_classes < 2) throw ConfigError("arch: num_classes must be >= 2");
        if (num_classes > 254) throw ConfigError("arch: num_classes must be <= 254");
        if (feature_dim < 8) throw ConfigError("arch: feature_dim must be >= 8");
        if (metric_dim < 2) throw ConfigError("arch: metric_dim must be >= 2");
        if (base_width < 1) throw ConfigError("arch: base_width must be >= 1");
    }

    bool operator==(const ArchConfig&) const = default;
};

struct ConvSpec {
    std::string name;
    ParamGroup group;
    int in_channels;
    int out_channels;
    int kernel;
    int stride;
    bool relu;
};

inline std::vector<ConvSpec> segmentation_layers(const ArchConfig& a) {
    const int w = a.base_width;
    const int d = a.feature_dim;
    return {
        {"feature_extractor.block1", ParamGroup::feature_extractor, 3, w, 3, 2, true},
        {"feature_extractor.block2", ParamGroup::feature_extractor, w, 2 * w, 3, 1, true},
        {"feature_extractor.block3", ParamGroup::feature_extractor, 2 * w, d, 3, 2, true},
        {"feature_extractor.block4", ParamGroup::feature_extractor, d, d, 3, 1, true},
        {"classifier.fc1", ParamGroup::classifier, d, d, 1, 1, true},
        {"classifier.fc2", ParamGroup::classifier, d, a.num_classes, 1, 1, false},
    };
}

inline constexpr int kFeatureLayers = 4;

/// Mirrors the classifier, with `metric_dim` outputs.
inline std::vector<ConvSpec> metric_layers(const ArchConfig& a) {
    const int d = a.feature_dim;
    return {
        {"metric_head.fc1", ParamGroup::metric_head, d, d, 1, 1, true},
        {"metric_head.fc2", ParamGroup::metric_head, d, a.metric_dim, 1, 1, false},
    };
}

template <typename T>
struct Param {
    std::string name;
    ParamGroup group;
    Matrix<T> value;
};

/// Named, ordered parameter arrays. Conv weights are stored as
/// (kernel·kernel·in) × out matrices and biases as 1 × out rows.
template <typename T>
struct NetworkParams {
    std::vector<Param<T>> params;

    std::size_t size() const { return params.size(); }
    Param<T>& operator[](std::size_t i) { return params[i]; }
    const Param<T>& operator[](std::size_t i) const { return params[i]; }

    const Param<T>& find(const std::string& name) const {
        for (const auto& p : params)
            if (p.name == name) return p;
        throw ConfigError("no parameter named " + name);
    }
    Param<T>& find(const std::string& name) {
        return const_cast<Param<T>&>(static_cast<const NetworkParams&>(*this).find(name));
    }

    NetworkParams zeros_like() const {
        NetworkParams out = *this;
        for (auto& p : out.params) p.value.setZero();
        return out;
    }

    bool same_structure(const NetworkParams& other) const {
        if (params.size() != other.params.size()) return false;
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& a = params[i];
            const auto& b = other.params[i];
            if (a.name != b.name || a.group != b.group || a.value.rows() != b.value.rows() ||
                a.value.cols() != b.value.cols())
                return false;
        }
        return true;
    }

    NetworkParams& operator+=(const NetworkParams& other) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i].value += other.params[i].value;
        return *this;
    }

    NetworkParams& operator*=(T s) {
        for (auto& p : params) p.value *= s;
        return *this;
    }

    template <typename U>
    NetworkParams<U> cast() const {
        NetworkParams<U> out;
        for (const auto& p : params) out.params.push_back({p.name, p.group, p.value.template cast<U>()});
        return out;
    }

    bool operator==(const NetworkParams& other) const {
        if (!same_structure(other)) return false;
        for (std::size_t i = 0; i < params.size(); ++i)
            if (params[i].value != other.params[i].value) return false;
        return true;
    }
};

namespace detail {

template <typename T>
void init_layers(NetworkParams<T>& net, const std::vector<ConvSpec>& layers, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const auto& l : layers) {
        const int fan_in = l.kernel * l.kernel * l.in_channels;
        const double scale = std::sqrt(2.0 / fan_in);
        Matrix<T> w(fan_in, l.out_channels);
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(normal(rng) * scale);
        net.params.push_back({l.name + ".weight", l.group, std::move(w)});
        net.params.push_back({l.name + ".bias", l.group, Matrix<T>::Zero(1, l.out_channels)});
    }
}

} // namespace detail

/// Segmentation network (feature extractor + classifier), Kaiming fan-in
/// initialisation with zero biases.
template <typename T = float>
NetworkParams<T> init_network(const ArchConfig& arch, std::uint64_t seed) {
    arch.validate();
    Rng rng = make_stream(seed, "init.segnet");
    NetworkParams<T> net;
    detail::init_layers(net, segmentation_layers(arch), rng);
    return net;
}

template <typename T = float>
NetworkParams<T> init_metric_network(const ArchConfig& arch, std::uint64_t seed) {
    arch.validate();
    Rng rng = make_stream(seed, "init.metric");
    NetworkParams<T> net;
    detail::init_layers(net, metric_layers(arch), rng);
    return net;
}

/// Saved activations of one convolution, needed by the backward pass.
template <typename T>
struct ConvCache {
    Tensor3<T> input;
    Matrix<T> cols;
    Tensor3<T> output;  // after the activation
};

namespace detail {

template <typename T>
Matrix<T> im2col(const Tensor3<T>& in, int kernel, int stride, int out_h, int out_w) {
    const int pad = kernel / 2;
    const int c = in.channels;
    Matrix<T> cols = Matrix<T>::Zero(out_h * out_w, kernel * kernel * c);
    for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
            const int row = oy * out_w + ox;
            for (int ky = 0; ky < kernel; ++ky) {
                const int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= in.height) continue;
                for (int kx = 0; kx < kernel; ++kx) {
                    const int ix = ox * stride + kx - pad;
                    if (ix < 0 || ix >= in.width) continue;
                    cols.block(row, (ky * kernel + kx) * c, 1, c) = in.data.row(iy * in.width + ix);
                }
            }
        }
    }
    return cols;
}

template <typename T>
Tensor3<T> col2im(const Matrix<T>& dcols, int in_h, int in_w, int channels, int kernel, int stride, int out_h,
                  int out_w) {
    const int pad = kernel / 2;
    Tensor3<T> grad(in_h, in_w, channels);
    for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
            const int row = oy * out_w + ox;
            for (int ky = 0; ky < kernel; ++ky) {
                const int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= in_h) continue;
                for (int kx = 0; kx < kernel; ++kx) {
                    const int ix = ox * stride + kx - pad;
                    if (ix < 0 || ix >= in_w) continue;
                    grad.data.row(iy * in_w + ix) += dcols.block(row, (ky * kernel + kx) * channels, 1, channels);
                }
            }
        }
    }
    return grad;
}

template <typename T>
Tensor3<T> conv_forward(const ConvSpec& spec, const Matrix<T>& weight, const Matrix<T>& bias, Tensor3<T> input,
                        ConvCache<T>* cache) {
    if (input.channels != spec.in_channels)
        throw ShapeError(spec.name + ": expected " + std::to_string(spec.in_channels) + " input channels, got " +
                         std::to_string(input.channels));
    if (input.height % spec.stride != 0 || input.width % spec.stride != 0)
        throw ShapeError(spec.name + ": spatial size not divisible by stride");
    const int out_h = input.height / spec.stride;
    const int out_w = input.width / spec.stride;
    Tensor3<T> out(out_h, out_w, spec.out_channels);
    Matrix<T> cols;
    if (spec.kernel == 1 && spec.stride == 1) {
        out.data.noalias() = input.data * weight;
    } else {
        cols = im2col(input, spec.kernel, spec.stride, out_h, out_w);
        out.data.noalias() = cols * weight;
    }
    out.data.rowwise() += bias.row(0);
    if (spec.relu) out.data = out.data.cwiseMax(T(0));
    if (cache) {
        cache->input = std::move(input);
        cache->cols = std::move(cols);
        cache->output = out;
    }
    return out;
}

/// Returns the gradient w.r.t. the layer input; accumulates weight/bias grads.
template <typename T>
Tensor3<T> conv_backward(const ConvSpec& spec, const Matrix<T>& weight, const ConvCache<T>& cache,
                         Tensor3<T> grad_out, Matrix<T>& grad_w, Matrix<T>& grad_b, bool need_input_grad) {
    if (spec.relu) grad_out.data = (cache.output.data.array() > T(0)).select(grad_out.data, T(0));
    grad_b.row(0) += grad_out.data.colwise().sum();
    const bool pointwise = spec.kernel == 1 && spec.stride == 1;
    const Matrix<T>& cols = pointwise ? cache.input.data : cache.cols;
    grad_w.noalias() += cols.transpose() * grad_out.data;
    if (!need_input_grad) return {};
    Matrix<T> dcols = grad_out.data * weight.transpose();
    if (pointwise) {
        Tensor3<T> g(cache.input.height, cache.input.width, cache.input.channels);
        g.data = std::move(dcols);
        return g;
    }
    return col2im(dcols, cache.input.height, cache.input.width, cache.input.channels, spec.kernel, spec.stride,
                  grad_out.height, grad_out.width);
}

} // namespace detail

/// Result of a segmentation forward pass. `caches` is populated only when a
/// backward pass was requested.
template <typename T>
struct SegOutput {
    Tensor3<T> features;    // (H/s)×(W/s)×D
    Tensor3<T> low_logits;  // (H/s)×(W/s)×C
    Tensor3<T> logits;      // H×W×C
    std::vector<ConvCache<T>> caches;
};

template <typename T>
SegOutput<T> forward(const NetworkParams<T>& params, const ArchConfig& arch, const Tensor3<T>& image,
                     bool keep_cache = false) {
    if (image.channels != 3) throw ShapeError("forward: image must have 3 channels");
    if (image.height % ArchConfig::stride != 0 || image.width % ArchConfig::stride != 0 || image.height == 0 ||
        image.width == 0)
        throw ShapeError("forward: image size must be a positive multiple of the network stride");
    const auto layers = segmentation_layers(arch);
    if (params.size() != 2 * layers.size()) throw ShapeError("forward: parameter set does not match architecture");
    SegOutput<T> out;
    if (keep_cache) out.caches.resize(layers.size());
    Tensor3<T> x = image;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        x = detail::conv_forward(layers[i], params[2 * i].value, params[2 * i + 1].value, std::move(x),
                                 keep_cache ? &out.caches[i] : nullptr);
        if (static_cast<int>(i) + 1 == kFeatureLayers) out.features = x;
    }
    out.low_logits = std::move(x);
    out.logits = resize_bilinear(out.low_logits, image.height, image.width);
    return out;
}

/// Gradient of a scalar loss w.r.t. every segmentation parameter, given the
/// loss gradient w.r.t. the full-resolution logits.
template <typename T>
NetworkParams<T> backward(const NetworkParams<T>& params, const ArchConfig& arch, const SegOutput<T>& fwd,
                          const Tensor3<T>& grad_logits) {
    const auto layers = segmentation_layers(arch);
    if (fwd.caches.size() != layers.size()) throw Error("backward: forward pass did not keep its cache");
    if (!grad_logits.same_shape(fwd.logits)) throw ShapeError("backward: gradient shape mismatch");
    NetworkParams<T> grads = params.zeros_like();
    Tensor3<T> g = resize_bilinear_adjoint(grad_logits, fwd.low_logits.height, fwd.low_logits.width);
    for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
        g = detail::conv_backward(layers[i], params[2 * i].value, fwd.caches[i], std::move(g), grads[2 * i].value,
                                  grads[2 * i + 1].value, i > 0);
    }
    return grads;
}

template <typename T>
struct MetricOutput {
    Tensor3<T> low;   // (H/s)×(W/s)×N_f
    Tensor3<T> full;  // H×W×N_f
    std::vector<ConvCache<T>> caches;
};

/// Metric head over (constant) teacher features, upsampled like the logits.
template <typename T>
MetricOutput<T> forward_metric(const NetworkParams<T>& metric, const ArchConfig& arch, const Tensor3<T>& features,
                               bool keep_cache = false) {
    const auto layers = metric_layers(arch);
    if (metric.size() != 2 * layers.size()) throw ShapeError("forward_metric: parameter set does not match");
    if (features.channels != arch.feature_dim) throw ShapeError("forward_metric: feature channel mismatch");
    MetricOutput<T> out;
    if (keep_cache) out.caches.resize(layers.size());
    Tensor3<T> x = features;
    for (std::size_t i = 0; i < layers.size(); ++i)
        x = detail::conv_forward(layers[i], metric[2 * i].value, metric[2 * i + 1].value, std::move(x),
                                 keep_cache ? &out.caches[i] : nullptr);
    out.low = std::move(x);
    out.full = resize_bilinear(out.low, features.height * ArchConfig::stride, features.width * ArchConfig::stride);
    return out;
}

/// Gradient w.r.t. the metric head only; the input features are constants.
template <typename T>
NetworkParams<T> backward_metric(const NetworkParams<T>& metric, const ArchConfig& arch, const MetricOutput<T>& fwd,
                                 const Tensor3<T>& grad_full) {
    const auto layers = metric_layers(arch);
    if (fwd.caches.size() != layers.size()) throw Error("backward_metric: forward pass did not keep its cache");
    if (!grad_full.same_shape(fwd.full)) throw ShapeError("backward_metric: gradient shape mismatch");
    NetworkParams<T> grads = metric.zeros_like();
    Tensor3<T> g = resize_bilinear_adjoint(grad_full, fwd.low.height, fwd.low.width);
    for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i)
        g = detail::conv_backward(layers[i], metric[2 * i].value, fwd.caches[i], std::move(g), grads[2 * i].value,
                                  grads[2 * i + 1].value, i > 0);
    return grads;
}

} // namespace stvm
