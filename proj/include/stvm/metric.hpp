#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "error.hpp"
#include "rng.hpp"
#include "teacher.hpp"
#include "tensor.hpp"

namespace stvm {

/// Per-class confidence thresholds τ_c, tracked as a moving average of the
/// per-frame (1 − q_M) confidence quantile.
template <typename T>
struct ThresholdState {
    std::vector<std::optional<T>> tau;
    double momentum = 0.99;
    double quantile = 0.2;

    ThresholdState() = default;
    ThresholdState(int num_classes, double q, double m) : tau(static_cast<std::size_t>(num_classes)), momentum(m), quantile(q) {
        if (!(q > 0.0 && q < 1.0)) throw ConfigError("metric: quantile q_M must lie in (0, 1)");
        if (!(m >= 0.0 && m < 1.0)) throw ConfigError("metric: threshold momentum must lie in [0, 1)");
    }

    bool operator==(const ThresholdState&) const = default;
};

/// Empirical quantile with "lower" interpolation: the sorted element at
/// index floor(level · (n − 1)).
template <typename T>
T lower_quantile(std::vector<T> values, double level) {
    if (values.empty()) throw RangeError("quantile of an empty set");
    const auto k = static_cast<std::size_t>(std::floor(level * static_cast<double>(values.size() - 1)));
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
    return values[k];
}

namespace detail {

template <typename T>
std::vector<std::vector<T>> confidences_by_class(const Grid<T>& conf, const LabelMap& labels, int num_classes) {
    if (!conf.same_shape(labels.height, labels.width)) throw ShapeError("confidence/label size mismatch");
    std::vector<std::vector<T>> by_class(static_cast<std::size_t>(num_classes));
    for (int i = 0; i < labels.pixels(); ++i) {
        const int c = labels[i];
        if (c < num_classes) by_class[c].push_back(conf[i]);
    }
    return by_class;
}

} // namespace detail

template <typename T>
void update_thresholds(ThresholdState<T>& state, const Grid<T>& conf, const LabelMap& labels) {
    const int num_classes = static_cast<int>(state.tau.size());
    const auto by_class = detail::confidences_by_class(conf, labels, num_classes);
    for (int c = 0; c < num_classes; ++c) {
        if (by_class[c].empty()) continue;
        const T frame = lower_quantile(by_class[c], 1.0 - state.quantile);
        auto& tau = state.tau[c];
        if (!tau)
            tau = frame;
        else
            tau = static_cast<T>(state.momentum * static_cast<double>(*tau) +
                                 (1.0 - state.momentum) * static_cast<double>(frame));
    }
}

/// Metric pseudo-labels: class index where the pixel's confidence strictly
/// exceeds its class threshold, `kIgnoreLabel` (an all-zero row) elsewhere.
using MetricLabelMask = LabelMap;

template <typename T>
MetricLabelMask select_metric_pseudo_labels(const Grid<T>& conf, const LabelMap& labels,
                                            const std::vector<std::optional<T>>& tau) {
    if (!conf.same_shape(labels.height, labels.width)) throw ShapeError("confidence/label size mismatch");
    MetricLabelMask mask(labels.height, labels.width, kIgnoreLabel);
    for (int i = 0; i < labels.pixels(); ++i) {
        const int c = labels[i];
        if (c >= static_cast<int>(tau.size()) || !tau[c]) continue;
        if (conf[i] > *tau[c]) mask[i] = static_cast<std::uint8_t>(c);
    }
    return mask;
}

template <typename T>
MetricLabelMask select_metric_pseudo_labels(const Grid<T>& conf, const LabelMap& labels,
                                            const ThresholdState<T>& state) {
    return select_metric_pseudo_labels(conf, labels, state.tau);
}

struct Sample {
    int y = 0;
    int x = 0;
    int cls = 0;
    bool operator==(const Sample&) const = default;
};

using SampleSet = std::vector<Sample>;

/// Draws the same number k = min(cap, smallest present class count) of
/// pixels from every class present in the mask, without replacement.
inline SampleSet balanced_sample(const MetricLabelMask& mask, int num_classes, int cap_per_class, Rng& rng) {
    if (cap_per_class < 1) throw ConfigError("balanced_sample: cap_per_class must be >= 1");
    std::vector<std::vector<int>> pixels(static_cast<std::size_t>(num_classes));
    for (int i = 0; i < mask.pixels(); ++i)
        if (mask[i] < num_classes) pixels[mask[i]].push_back(i);
    std::size_t k = static_cast<std::size_t>(cap_per_class);
    bool any = false;
    for (const auto& p : pixels)
        if (!p.empty()) {
            k = std::min(k, p.size());
            any = true;
        }
    SampleSet out;
    if (!any) return out;
    for (int c = 0; c < num_classes; ++c) {
        auto& p = pixels[c];
        if (p.empty()) continue;
        // partial Fisher–Yates: the first k slots become a uniform k-subset
        for (std::size_t j = 0; j < k; ++j) {
            std::uniform_int_distribution<std::size_t> pick(j, p.size() - 1);
            std::swap(p[j], p[pick(rng)]);
            out.push_back({p[j] / mask.width, p[j] % mask.width, c});
        }
    }
    return out;
}

/// Squared Euclidean distance between L2-normalised vectors; lies in [0, 4].
template <typename DerivedA, typename DerivedB>
auto proxy_distance(const Eigen::MatrixBase<DerivedA>& x, const Eigen::MatrixBase<DerivedB>& y) {
    using T = typename DerivedA::Scalar;
    const T nx = x.norm();
    const T ny = y.norm();
    if (!(nx > T(0)) || !(ny > T(0))) throw NumericError("proxy_distance: zero-norm vector");
    return static_cast<T>((x / nx - y / ny).squaredNorm());
}

/// Trainable class proxies; row c is the proxy of class c.
template <typename T>
struct ProxyBank {
    Matrix<T> proxies;

    int num_classes() const { return static_cast<int>(proxies.rows()); }
    bool operator==(const ProxyBank&) const = default;
};

/// Unit-normalised standard-normal draws, one per class.
template <typename T>
ProxyBank<T> init_proxies(int num_classes, int dim, std::uint64_t seed) {
    Rng rng = make_stream(seed, "init.proxies");
    std::normal_distribution<double> normal(0.0, 1.0);
    ProxyBank<T> bank{Matrix<T>(num_classes, dim)};
    for (int c = 0; c < num_classes; ++c) {
        for (int i = 0; i < dim; ++i) bank.proxies(c, i) = static_cast<T>(normal(rng));
        bank.proxies.row(c).normalize();
    }
    return bank;
}

template <typename T>
struct NcaResult {
    T loss = 0;
    std::vector<RowVector<T>> feature_grads;  // d loss / d f, one per sample
    Matrix<T> proxy_grads;                    // d loss / d proxies
};

/// Temperature-scaled proxy-NCA loss averaged over the sample set, with its
/// gradients w.r.t. the sampled metric features and all proxies.
template <typename T>
NcaResult<T> nca_loss(const Tensor3<T>& features, const SampleSet& samples, const ProxyBank<T>& bank,
                      double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("nca_loss: temperature must be > 0");
    if (samples.empty()) throw RangeError("nca_loss: empty sample set");
    if (features.channels != bank.proxies.cols()) throw ShapeError("nca_loss: feature/proxy dimension mismatch");
    const int num_classes = bank.num_classes();
    const T inv_t = static_cast<T>(1.0 / temperature);
    const T inv_n = T(1) / static_cast<T>(samples.size());

    Matrix<T> unit(num_classes, bank.proxies.cols());
    std::vector<T> pnorm(static_cast<std::size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c) {
        pnorm[c] = bank.proxies.row(c).norm();
        if (!(pnorm[c] > T(0))) throw NumericError("nca_loss: zero proxy");
        unit.row(c) = bank.proxies.row(c) / pnorm[c];
    }
    Matrix<T> grad_unit_proxy = Matrix<T>::Zero(num_classes, bank.proxies.cols());

    NcaResult<T> out;
    out.feature_grads.reserve(samples.size());
    std::vector<T> z(static_cast<std::size_t>(num_classes));
    for (const Sample& s : samples) {
        if (s.cls < 0 || s.cls >= num_classes) throw RangeError("nca_loss: sample class out of range");
        const RowVector<T> f = features.pixel(s.y, s.x);
        const T fnorm = f.norm();
        if (!(fnorm > T(0))) throw NumericError("nca_loss: zero metric feature");
        const RowVector<T> u = f / fnorm;
        T zmax = -std::numeric_limits<T>::infinity();
        for (int c = 0; c < num_classes; ++c) {
            z[c] = -(u - unit.row(c)).squaredNorm() * inv_t;
            zmax = std::max(zmax, z[c]);
        }
        T sum = 0;
        for (int c = 0; c < num_classes; ++c) sum += std::exp(z[c] - zmax);
        const T lse = zmax + std::log(sum);
        out.loss += (lse - z[s.cls]) * inv_n;

        RowVector<T> grad_u = RowVector<T>::Zero(u.size());
        for (int c = 0; c < num_classes; ++c) {
            // dL/dz_c = softmax_c − [c = label];  dz_c/dd_c = −1/T
            const T dz = std::exp(z[c] - lse) - (c == s.cls ? T(1) : T(0));
            const T dd = -dz * inv_t * inv_n;
            const RowVector<T> diff = u - unit.row(c);
            grad_u += T(2) * dd * diff;
            grad_unit_proxy.row(c) -= T(2) * dd * diff;
        }
        // chain through u = f / ‖f‖
        out.feature_grads.push_back((grad_u - u * u.dot(grad_u)) / fnorm);
    }
    out.proxy_grads.resize(num_classes, bank.proxies.cols());
    for (int c = 0; c < num_classes; ++c) {
        const RowVector<T> g = grad_unit_proxy.row(c);
        out.proxy_grads.row(c) = (g - unit.row(c) * unit.row(c).dot(g)) / pnorm[c];
    }
    return out;
}

/// Reverse sigmoid mapping a proxy distance to a weight in (0, 1).
inline double reliability_from_distance(double d, double alpha, double beta) {
    return 1.0 / (1.0 + std::exp(-alpha * (beta - d)));
}

/// Reverse-sigmoid reliability w = 1 / (1 + exp(−α(β − d))) of each pixel's
/// distance to the proxy of its predicted class. Pixels carrying the ignore
/// label get weight 0.
template <typename T>
Grid<T> reliability_map(const Tensor3<T>& features, const LabelMap& labels, const ProxyBank<T>& bank, double alpha,
                        double beta) {
    if (!(alpha > 0.0)) throw ConfigError("reliability_map: alpha must be > 0");
    if (!labels.same_shape(features.height, features.width)) throw ShapeError("reliability_map: size mismatch");
    Grid<T> w(features.height, features.width);
    for (int i = 0; i < labels.pixels(); ++i) {
        const int c = labels[i];
        if (c >= bank.num_classes()) continue;
        const double d = proxy_distance(features.data.row(i), bank.proxies.row(c));
        w[i] = static_cast<T>(reliability_from_distance(d, alpha, beta));
    }
    return w;
}

/// Distance of every pixel's metric feature to the proxy of its label.
template <typename T>
Grid<T> proxy_distance_map(const Tensor3<T>& features, const LabelMap& labels, const ProxyBank<T>& bank) {
    if (!labels.same_shape(features.height, features.width)) throw ShapeError("proxy_distance_map: size mismatch");
    Grid<T> d(features.height, features.width);
    for (int i = 0; i < labels.pixels(); ++i) {
        const int c = labels[i];
        if (c < bank.num_classes()) d[i] = proxy_distance(features.data.row(i), bank.proxies.row(c));
    }
    return d;
}

} // namespace stvm
