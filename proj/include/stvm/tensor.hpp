#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "error.hpp"

namespace stvm {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// Channel-last spatial array. Row `y * width + x` of `data` holds the
/// channel vector of pixel (y, x).
template <typename T>
struct Tensor3 {
    int height = 0;
    int width = 0;
    int channels = 0;
    Matrix<T> data;

    Tensor3() = default;
    Tensor3(int h, int w, int c) : height(h), width(w), channels(c), data(Matrix<T>::Zero(h * w, c)) {}

    int pixels() const { return height * width; }
    T& at(int y, int x, int c) { return data(y * width + x, c); }
    const T& at(int y, int x, int c) const { return data(y * width + x, c); }

    auto pixel(int y, int x) { return data.row(y * width + x); }
    auto pixel(int y, int x) const { return data.row(y * width + x); }

    bool same_shape(const Tensor3& other) const {
        return height == other.height && width == other.width && channels == other.channels;
    }

    template <typename U>
    Tensor3<U> cast() const {
        Tensor3<U> out;
        out.height = height;
        out.width = width;
        out.channels = channels;
        out.data = data.template cast<U>();
        return out;
    }

    bool operator==(const Tensor3& other) const { return same_shape(other) && data == other.data; }
};

/// Images are 3-channel tensors with values in [0, 1].
template <typename T>
using ImageT = Tensor3<T>;
using Image = Tensor3<float>;

/// Single-channel H×W array (label maps, confidences, reliabilities).
template <typename T>
struct Grid {
    int height = 0;
    int width = 0;
    std::vector<T> values;

    Grid() = default;
    Grid(int h, int w, T fill = T{}) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

    int pixels() const { return height * width; }
    T& operator()(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    const T& operator()(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
    T& operator[](std::size_t i) { return values[i]; }
    const T& operator[](std::size_t i) const { return values[i]; }

    bool same_shape(int h, int w) const { return height == h && width == w; }
    bool operator==(const Grid& other) const = default;
};

/// Class-index map; 255 marks pixels excluded from losses and metrics.
using LabelMap = Grid<std::uint8_t>;
inline constexpr std::uint8_t kIgnoreLabel = 255;

/// One output coordinate's bilinear source taps along a single axis.
struct AxisTap {
    int lo = 0;
    int hi = 0;
    double w_lo = 1.0;
    double w_hi = 0.0;
};

/// Bilinear sampling positions with half-pixel centres (corners not aligned).
inline std::vector<AxisTap> bilinear_taps(int in_size, int out_size) {
    std::vector<AxisTap> taps(static_cast<std::size_t>(out_size));
    const double scale = static_cast<double>(in_size) / out_size;
    for (int o = 0; o < out_size; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        int lo = std::min(static_cast<int>(src), in_size - 1);
        int hi = std::min(lo + 1, in_size - 1);
        double frac = src - lo;
        taps[o] = {lo, hi, 1.0 - frac, frac};
    }
    return taps;
}

template <typename T>
Tensor3<T> resize_bilinear(const Tensor3<T>& in, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw RangeError("resize to an empty grid");
    if (in.height == out_h && in.width == out_w) return in;
    const auto ty = bilinear_taps(in.height, out_h);
    const auto tx = bilinear_taps(in.width, out_w);
    Tensor3<T> out(out_h, out_w, in.channels);
    for (int y = 0; y < out_h; ++y) {
        const AxisTap& a = ty[y];
        for (int x = 0; x < out_w; ++x) {
            const AxisTap& b = tx[x];
            out.data.row(y * out_w + x) =
                T(a.w_lo * b.w_lo) * in.data.row(a.lo * in.width + b.lo) +
                T(a.w_lo * b.w_hi) * in.data.row(a.lo * in.width + b.hi) +
                T(a.w_hi * b.w_lo) * in.data.row(a.hi * in.width + b.lo) +
                T(a.w_hi * b.w_hi) * in.data.row(a.hi * in.width + b.hi);
        }
    }
    return out;
}

/// Adjoint of `resize_bilinear`: scatters an output-space gradient back onto
/// the `in_h`×`in_w` grid.
template <typename T>
Tensor3<T> resize_bilinear_adjoint(const Tensor3<T>& grad_out, int in_h, int in_w) {
    if (grad_out.height == in_h && grad_out.width == in_w) return grad_out;
    const auto ty = bilinear_taps(in_h, grad_out.height);
    const auto tx = bilinear_taps(in_w, grad_out.width);
    Tensor3<T> grad_in(in_h, in_w, grad_out.channels);
    for (int y = 0; y < grad_out.height; ++y) {
        const AxisTap& a = ty[y];
        for (int x = 0; x < grad_out.width; ++x) {
            const AxisTap& b = tx[x];
            auto g = grad_out.data.row(y * grad_out.width + x);
            grad_in.data.row(a.lo * in_w + b.lo) += T(a.w_lo * b.w_lo) * g;
            grad_in.data.row(a.lo * in_w + b.hi) += T(a.w_lo * b.w_hi) * g;
            grad_in.data.row(a.hi * in_w + b.lo) += T(a.w_hi * b.w_lo) * g;
            grad_in.data.row(a.hi * in_w + b.hi) += T(a.w_hi * b.w_hi) * g;
        }
    }
    return grad_in;
}

/// Row-wise softmax with max subtraction.
template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& logits) {
    Matrix<T> out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const T m = logits.row(r).maxCoeff();
        out.row(r) = (logits.row(r).array() - m).exp();
        out.row(r) /= out.row(r).sum();
    }
    return out;
}

template <typename T>
void require_finite(const Matrix<T>& m, const char* what) {
    if (!m.allFinite()) throw NumericError(std::string("non-finite values in ") + what);
}

} // namespace stvm
