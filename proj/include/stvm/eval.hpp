#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "error.hpp"
#include "segnet.hpp"
#include "tensor.hpp"

namespace stvm {

struct IoUReport {
    int num_classes = 0;
    std::vector<std::vector<long>> confusion;  // [ground truth][prediction]
    std::vector<std::optional<double>> iou;    // absent when TP+FP+FN = 0
    double miou = 0.0;
    long pixels = 0;

    IoUReport() = default;
    explicit IoUReport(int c)
        : num_classes(c), confusion(static_cast<std::size_t>(c), std::vector<long>(static_cast<std::size_t>(c), 0)),
          iou(static_cast<std::size_t>(c)) {}

    /// Adds one prediction/ground-truth pair; ignore-label pixels are skipped.
    void accumulate(const LabelMap& pred, const LabelMap& gt) {
        if (!pred.same_shape(gt.height, gt.width)) throw ShapeError("iou_report: prediction/label size mismatch");
        for (int i = 0; i < gt.pixels(); ++i) {
            if (gt[i] == kIgnoreLabel || gt[i] >= num_classes) continue;
            if (pred[i] >= num_classes) throw DataError("iou_report: prediction out of class range");
            ++confusion[gt[i]][pred[i]];
            ++pixels;
        }
    }

    void finalize() {
        double sum = 0.0;
        int present = 0;
        for (int c = 0; c < num_classes; ++c) {
            long tp = confusion[c][c], fp = 0, fn = 0;
            for (int k = 0; k < num_classes; ++k) {
                if (k == c) continue;
                fn += confusion[c][k];
                fp += confusion[k][c];
            }
            const long denom = tp + fp + fn;
            if (denom == 0) {
                iou[c].reset();
                continue;
            }
            iou[c] = static_cast<double>(tp) / static_cast<double>(denom);
            sum += *iou[c];
            ++present;
        }
        miou = present ? sum / present : 0.0;
    }
};

inline IoUReport iou_report(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts, int num_classes) {
    if (preds.size() != gts.size()) throw ShapeError("iou_report: prediction/label count mismatch");
    IoUReport r(num_classes);
    for (std::size_t i = 0; i < preds.size(); ++i) r.accumulate(preds[i], gts[i]);
    r.finalize();
    return r;
}

/// Per-class mean silhouette (absent for classes without points) and overall
/// mean, both scaled by 100.
struct SilhouetteScores {
    double overall = 0.0;
    std::vector<std::optional<double>> class_means;
};

namespace detail {

/// Silhouette value per point from a pairwise distance oracle.
template <typename Dist>
std::vector<double> silhouette_values(std::size_t n, const std::vector<int>& labels, int num_clusters, Dist&& dist) {
    std::vector<long> count(static_cast<std::size_t>(num_clusters), 0);
    for (int l : labels) ++count[l];
    std::vector<double> s(n, 0.0);
    std::vector<double> sums(static_cast<std::size_t>(num_clusters));
    for (std::size_t i = 0; i < n; ++i) {
        if (count[labels[i]] <= 1) continue;  // singleton cluster: s = 0
        std::fill(sums.begin(), sums.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) sums[labels[j]] += dist(i, j);
        const double a = sums[labels[i]] / static_cast<double>(count[labels[i]] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (int c = 0; c < num_clusters; ++c)
            if (c != labels[i] && count[c] > 0) b = std::min(b, sums[c] / static_cast<double>(count[c]));
        const double m = std::max(a, b);
        s[i] = m > 0.0 ? (b - a) / m : 0.0;
    }
    return s;
}

} // namespace detail

/// Silhouette of labelled points under the normalised squared-L2 proxy
/// distance. Rows of `points` are feature vectors.
template <typename T>
SilhouetteScores silhouette(const Matrix<T>& points, const std::vector<int>& labels, int num_classes,
                            std::vector<double>* per_point = nullptr) {
    const auto n = static_cast<std::size_t>(points.rows());
    if (labels.size() != n) throw ShapeError("silhouette: point/label count mismatch");
    std::vector<bool> seen(static_cast<std::size_t>(num_classes), false);
    int clusters = 0;
    for (int l : labels) {
        if (l < 0 || l >= num_classes) throw RangeError("silhouette: label out of range");
        if (!seen[l]) seen[l] = true, ++clusters;
    }
    if (clusters < 2) throw RangeError("silhouette: undefined for fewer than two clusters");
    Matrix<double> unit = points.template cast<double>();
    for (Eigen::Index i = 0; i < unit.rows(); ++i) {
        const double nrm = unit.row(i).norm();
        if (!(nrm > 0.0)) throw NumericError("silhouette: zero-norm point");
        unit.row(i) /= nrm;
    }
    // ‖u − v‖² = 2 − 2 u·v for unit vectors
    const Matrix<double> gram = unit * unit.transpose();
    auto dist = [&](std::size_t i, std::size_t j) { return std::max(0.0, 2.0 - 2.0 * gram(i, j)); };
    const auto s = detail::silhouette_values(n, labels, num_classes, dist);
    SilhouetteScores out;
    out.class_means.resize(static_cast<std::size_t>(num_classes));
    std::vector<double> sum(static_cast<std::size_t>(num_classes), 0.0);
    std::vector<long> cnt(static_cast<std::size_t>(num_classes), 0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sum[labels[i]] += s[i];
        ++cnt[labels[i]];
        total += s[i];
    }
    for (int c = 0; c < num_classes; ++c)
        if (cnt[c]) out.class_means[c] = 100.0 * sum[c] / static_cast<double>(cnt[c]);
    out.overall = 100.0 * total / static_cast<double>(n);
    if (per_point) *per_point = s;
    return out;
}

/// Runs the network at each scale, averages the softmax maps resized back to
/// the input resolution, and returns the log of the average.
template <typename T>
Tensor3<T> multi_scale_predict(const NetworkParams<T>& params, const ArchConfig& arch, const Tensor3<T>& image,
                               const std::vector<double>& scales) {
    if (scales.empty()) throw RangeError("multi_scale_predict: no scales given");
    const int s = ArchConfig::stride;
    Tensor3<T> avg(image.height, image.width, arch.num_classes);
    for (double scale : scales) {
        if (!(scale > 0.0)) throw RangeError("multi_scale_predict: scales must be > 0");
        const int h = static_cast<int>(std::lround(image.height * scale / s)) * s;
        const int w = static_cast<int>(std::lround(image.width * scale / s)) * s;
        if (h < s || w < s) throw RangeError("multi_scale_predict: scale shrinks the image below the network stride");
        const Tensor3<T> scaled = resize_bilinear(image, h, w);
        const auto out = forward(params, arch, scaled);
        Tensor3<T> prob(h, w, arch.num_classes);
        prob.data = softmax_rows(out.logits.data);
        avg.data += resize_bilinear(prob, image.height, image.width).data;
    }
    avg.data /= static_cast<T>(scales.size());
    avg.data = avg.data.array().log().matrix();
    return avg;
}

} // namespace stvm
