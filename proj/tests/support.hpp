#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>

#include "stvm/stvm.hpp"

namespace stvm::testing {

template <typename T>
Tensor3<T> random_tensor(int h, int w, int c, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor3<T> t(h, w, c);
    for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data.data()[i] = static_cast<T>(uniform<double>(rng, lo, hi));
    return t;
}

inline LabelMap random_labels(int h, int w, int num_classes, Rng& rng) {
    LabelMap l(h, w);
    for (auto& v : l.values) v = static_cast<std::uint8_t>(uniform_int(rng, 0, num_classes - 1));
    return l;
}

template <typename T>
Grid<T> random_grid(int h, int w, Rng& rng, double lo = 0.0, double hi = 1.0) {
    Grid<T> g(h, w);
    for (auto& v : g.values) v = static_cast<T>(uniform<double>(rng, lo, hi));
    return g;
}

/// |a − b| / max(|a| + |b|, floor): symmetric relative error.
inline double rel_err(double a, double b, double floor = 1e-7) {
    return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), floor);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("stvm_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

/// True when both parameter sets put every ReLU unit on the same side of its
/// kink for `img`, i.e. a central difference between them sees a smooth loss.
template <typename T>
bool same_relu_pattern(const NetworkParams<T>& a, const NetworkParams<T>& b, const ArchConfig& arch,
                       const Tensor3<T>& img) {
    const auto fa = forward(a, arch, img, true), fb = forward(b, arch, img, true);
    for (std::size_t i = 0; i < fa.caches.size(); ++i)
        if (((fa.caches[i].output.data.array() > T(0)) != (fb.caches[i].output.data.array() > T(0))).any())
            return false;
    return true;
}

/// A deliberately small configuration that keeps end-to-end tests fast.
inline ExperimentConfig tiny_config() {
    ExperimentConfig c = desk_profile();
    c.arch = ArchConfig{4, 8, 8, 4};
    c.data.image_size = 16;
    c.data.n_source = 6;
    c.data.n_target = 6;
    c.data.n_eval = 4;
    c.data.source.palette.resize(4);
    c.data.target.palette.resize(4);
    c.data.source_geometry.class_weights.clear();
    c.data.target_geometry.class_weights.clear();
    c.train.iterations = 6;
    c.train.batch_size = 2;
    c.train.crop_size = 16;
    c.train.source_iterations = 4;
    c.train.teacher_period = 2;
    c.train.min_patch_area = 4;
    c.train.cap_per_class = 16;
    c.train.tau_mocm = 4.0;
    c.eval.interval = 2;
    c.eval.silhouette_points = 32;
    return c;
}

} // namespace stvm::testing
