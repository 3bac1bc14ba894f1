#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "error.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace stvm {

struct PhotoConfig {
    double brightness_lo = 0.7, brightness_hi = 1.3;
    double contrast_lo = 0.7, contrast_hi = 1.3;
    double saturation_lo = 0.7, saturation_hi = 1.3;
    double hue_lo = -0.1, hue_hi = 0.1;  // fraction of the hue circle
    double blur_prob = 0.5;
    double blur_sigma_lo = 0.1, blur_sigma_hi = 1.0;

    void validate() const {
        auto ordered = [](double lo, double hi, const char* what) {
            if (!(lo <= hi)) throw ConfigError(std::string("photometric: ") + what + " range is not ordered");
        };
        ordered(brightness_lo, brightness_hi, "brightness");
        ordered(contrast_lo, contrast_hi, "contrast");
        ordered(saturation_lo, saturation_hi, "saturation");
        ordered(hue_lo, hue_hi, "hue");
        ordered(blur_sigma_lo, blur_sigma_hi, "blur sigma");
        if (brightness_lo < 0 || contrast_lo < 0 || saturation_lo < 0 || blur_sigma_lo < 0)
            throw ConfigError("photometric: factors must be non-negative");
        if (!(blur_prob >= 0.0 && blur_prob <= 1.0)) throw ConfigError("photometric: blur_prob must lie in [0, 1]");
    }

    static PhotoConfig identity() { return {1, 1, 1, 1, 1, 1, 0, 0, 0, 0.1, 1.0}; }
};

namespace detail {

template <typename T>
T gray(const Eigen::Ref<const RowVector<T>>& p) {
    return T(0.299) * p(0) + T(0.587) * p(1) + T(0.114) * p(2);
}

template <typename T>
void clamp01(Tensor3<T>& img) {
    img.data = img.data.cwiseMax(T(0)).cwiseMin(T(1));
}

template <typename T>
void shift_hue(Tensor3<T>& img, double shift) {
    for (int i = 0; i < img.pixels(); ++i) {
        const double r = img.data(i, 0), g = img.data(i, 1), b = img.data(i, 2);
        const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
        const double delta = mx - mn;
        if (delta <= 0.0) continue;  // achromatic: hue undefined, unchanged
        double h;
        if (mx == r)
            h = std::fmod((g - b) / delta, 6.0);
        else if (mx == g)
            h = (b - r) / delta + 2.0;
        else
            h = (r - g) / delta + 4.0;
        h = h / 6.0 + shift;
        h -= std::floor(h);
        const double s = delta / mx, v = mx;
        const double hh = h * 6.0;
        const int sector = static_cast<int>(hh) % 6;
        const double f = hh - std::floor(hh);
        const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
        double rgb[3];
        switch (sector) {
        case 0: rgb[0] = v, rgb[1] = t, rgb[2] = p; break;
        case 1: rgb[0] = q, rgb[1] = v, rgb[2] = p; break;
        case 2: rgb[0] = p, rgb[1] = v, rgb[2] = t; break;
        case 3: rgb[0] = p, rgb[1] = q, rgb[2] = v; break;
        case 4: rgb[0] = t, rgb[1] = p, rgb[2] = v; break;
        default: rgb[0] = v, rgb[1] = p, rgb[2] = q; break;
        }
        for (int c = 0; c < 3; ++c) img.data(i, c) = static_cast<T>(rgb[c]);
    }
}

} // namespace detail

/// Separable Gaussian blur with replicated borders (radius ⌈3σ⌉).
template <typename T>
Tensor3<T> gaussian_blur(const Tensor3<T>& img, double sigma) {
    if (sigma <= 0.0) return img;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<T> kernel(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int k = -radius; k <= radius; ++k) total += std::exp(-0.5 * k * k / (sigma * sigma));
    for (int k = -radius; k <= radius; ++k)
        kernel[k + radius] = static_cast<T>(std::exp(-0.5 * k * k / (sigma * sigma)) / total);
    Tensor3<T> tmp(img.height, img.width, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int k = -radius; k <= radius; ++k) {
                const int sx = std::clamp(x + k, 0, img.width - 1);
                tmp.data.row(y * img.width + x) += kernel[k + radius] * img.data.row(y * img.width + sx);
            }
    Tensor3<T> out(img.height, img.width, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int k = -radius; k <= radius; ++k) {
                const int sy = std::clamp(y + k, 0, img.height - 1);
                out.data.row(y * img.width + x) += kernel[k + radius] * tmp.data.row(sy * img.width + x);
            }
    return out;
}

/// Brightness → contrast → saturation → hue → optional blur, each clamped to
/// [0, 1]. Geometry is untouched, so labels stay valid. Every call consumes
/// the same number of draws from `rng`.
template <typename T>
Tensor3<T> photometric(Tensor3<T> img, const PhotoConfig& cfg, Rng& rng) {
    cfg.validate();
    if (img.channels != 3) throw ShapeError("photometric: expected a 3-channel image");
    const T brightness = uniform<T>(rng, static_cast<T>(cfg.brightness_lo), static_cast<T>(cfg.brightness_hi));
    const T contrast = uniform<T>(rng, static_cast<T>(cfg.contrast_lo), static_cast<T>(cfg.contrast_hi));
    const T saturation = uniform<T>(rng, static_cast<T>(cfg.saturation_lo), static_cast<T>(cfg.saturation_hi));
    const double hue = uniform<double>(rng, cfg.hue_lo, cfg.hue_hi);
    const bool blur = uniform<double>(rng, 0.0, 1.0) < cfg.blur_prob;
    const double sigma = uniform<double>(rng, cfg.blur_sigma_lo, cfg.blur_sigma_hi);

    img.data *= brightness;
    detail::clamp01(img);

    if (contrast != T(1)) {
        T mean = 0;
        for (int i = 0; i < img.pixels(); ++i) mean += detail::gray<T>(img.data.row(i));
        mean /= static_cast<T>(img.pixels());
        img.data = (contrast * img.data.array() + (T(1) - contrast) * mean).matrix();
        detail::clamp01(img);
    }

    if (saturation != T(1)) {
        for (int i = 0; i < img.pixels(); ++i) {
            const T g = detail::gray<T>(img.data.row(i));
            img.data.row(i) = (saturation * img.data.row(i).array() + (T(1) - saturation) * g).matrix();
        }
        detail::clamp01(img);
    }

    if (hue != 0.0) {
        detail::shift_hue(img, hue);
        detail::clamp01(img);
    }

    if (blur) {
        img = gaussian_blur(img, sigma);
        detail::clamp01(img);
    }
    return img;
}

} // namespace stvm
