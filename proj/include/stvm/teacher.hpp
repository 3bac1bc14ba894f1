#pragma once

#include <cmath>

#include "error.hpp"
#include "segnet.hpp"
#include "tensor.hpp"

namespace stvm {

/// Exponential moving average of the student, refreshed every
/// `update_period` iterations with smoothing factor `smoothing`.
template <typename T>
struct TeacherState {
    NetworkParams<T> params;
    long update_period = 100;
    double smoothing = 1e-3;
    long last_update_iter = 0;

    void validate() const {
        if (update_period < 1) throw ConfigError("teacher: update_period must be >= 1");
        if (!(smoothing > 0.0 && smoothing <= 1.0)) throw ConfigError("teacher: smoothing must lie in (0, 1]");
    }
};

/// θ_T ← (1−λ)·θ_T + λ·θ_S when at least `update_period` iterations have
/// passed since the last refresh; otherwise the teacher is left untouched.
template <typename T>
bool ema_update(TeacherState<T>& teacher, const NetworkParams<T>& student, long iter) {
    teacher.validate();
    if (!teacher.params.same_structure(student)) throw ShapeError("ema_update: teacher/student structure mismatch");
    if (iter - teacher.last_update_iter < teacher.update_period) return false;
    const T lambda = static_cast<T>(teacher.smoothing);
    for (std::size_t i = 0; i < student.size(); ++i) {
        auto& t = teacher.params[i].value;
        t = (T(1) - lambda) * t + lambda * student[i].value;
    }
    teacher.last_update_iter = iter;
    return true;
}

template <typename T>
struct PseudoLabels {
    LabelMap labels;          // argmax class per pixel
    Grid<T> confidence;       // max softmax probability
};

/// One-hot argmax pseudo-labels (stored as class indices) and their softmax
/// confidences. Ties resolve to the lowest class index.
template <typename T>
PseudoLabels<T> pseudo_labels(const Tensor3<T>& logits) {
    require_finite(logits.data, "pseudo_labels logits");
    PseudoLabels<T> out{LabelMap(logits.height, logits.width), Grid<T>(logits.height, logits.width)};
    for (int i = 0; i < logits.pixels(); ++i) {
        auto row = logits.data.row(i);
        int best = 0;
        for (int c = 1; c < logits.channels; ++c)
            if (row(c) > row(best)) best = c;
        T denom = 0;
        for (int c = 0; c < logits.channels; ++c) denom += std::exp(row(c) - row(best));
        out.labels[i] = static_cast<std::uint8_t>(best);
        out.confidence[i] = T(1) / denom;
    }
    return out;
}

} // namespace stvm
