#pragma once

#include <algorithm>
#include <deque>
#include <random>
#include <vector>

#include "error.hpp"
#include "metric.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace stvm {

/// A connected class region cut out of a training frame, with everything
/// needed to paste it back into another frame.
template <typename T>
struct PatchRecord {
    Tensor3<T> image;        // h_p×w_p×3 crop
    LabelMap labels;         // pseudo-label crop
    Grid<T> reliability;     // reliability crop
    Grid<std::uint8_t> mask; // 1 on the component's pixels
    int cls = 0;
    int origin_y = 0;
    int origin_x = 0;
    double mean_distance = 0.0;

    int height() const { return mask.height; }
    int width() const { return mask.width; }
    bool operator==(const PatchRecord&) const = default;
};

/// Per-class FIFO queues of patches with a shared capacity.
template <typename T>
struct PatchBuffer {
    std::vector<std::deque<PatchRecord<T>>> queues;
    int capacity = 50;

    PatchBuffer() = default;
    PatchBuffer(int num_classes, int cap) : queues(static_cast<std::size_t>(num_classes)), capacity(cap) {
        if (cap < 1) throw ConfigError("mocm: buffer capacity must be >= 1");
    }

    std::size_t occupancy() const {
        std::size_t n = 0;
        for (const auto& q : queues) n += q.size();
        return n;
    }
    bool operator==(const PatchBuffer&) const = default;
};

/// Every 4-connected component of every class with at least `min_area`
/// pixels, cropped to its bounding box. `mean_distance` averages the metric
/// distance of the component's pixels to their class proxy.
template <typename T>
std::vector<PatchRecord<T>> extract_candidate_patches(const Tensor3<T>& image, const LabelMap& labels,
                                                      const Grid<T>& reliability, const Grid<T>& distance,
                                                      int min_area) {
    const int h = labels.height;
    const int w = labels.width;
    if (image.height != h || image.width != w || !reliability.same_shape(h, w) || !distance.same_shape(h, w))
        throw ShapeError("extract_candidate_patches: inputs are not spatially aligned");
    std::vector<PatchRecord<T>> out;
    std::vector<int> component(static_cast<std::size_t>(h) * w, -1);
    std::vector<int> stack;
    std::vector<int> members;
    int next_id = 0;
    for (int start = 0; start < h * w; ++start) {
        if (component[start] >= 0 || labels[start] == kIgnoreLabel) continue;
        const int cls = labels[start];
        members.clear();
        stack.assign(1, start);
        component[start] = next_id;
        int y0 = h, y1 = -1, x0 = w, x1 = -1;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            members.push_back(p);
            const int py = p / w, px = p % w;
            y0 = std::min(y0, py), y1 = std::max(y1, py), x0 = std::min(x0, px), x1 = std::max(x1, px);
            const int nbr[4][2] = {{py - 1, px}, {py + 1, px}, {py, px - 1}, {py, px + 1}};
            for (const auto& n : nbr) {
                if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
                const int q = n[0] * w + n[1];
                if (component[q] < 0 && labels[q] == cls) {
                    component[q] = next_id;
                    stack.push_back(q);
                }
            }
        }
        if (static_cast<int>(members.size()) >= min_area) {
            PatchRecord<T> rec;
            const int ph = y1 - y0 + 1, pw = x1 - x0 + 1;
            rec.cls = cls;
            rec.origin_y = y0;
            rec.origin_x = x0;
            rec.image = Tensor3<T>(ph, pw, image.channels);
            rec.labels = LabelMap(ph, pw);
            rec.reliability = Grid<T>(ph, pw);
            rec.mask = Grid<std::uint8_t>(ph, pw, 0);
            for (int y = 0; y < ph; ++y)
                for (int x = 0; x < pw; ++x) {
                    const int src = (y0 + y) * w + (x0 + x);
                    rec.image.data.row(y * pw + x) = image.data.row(src);
                    rec.labels(y, x) = labels[src];
                    rec.reliability(y, x) = reliability[src];
                }
            double sum = 0.0;
            for (int p : members) {
                rec.mask(p / w - y0, p % w - x0) = 1;
                sum += static_cast<double>(distance[p]);
            }
            rec.mean_distance = sum / static_cast<double>(members.size());
            out.push_back(std::move(rec));
        }
        ++next_id;
    }
    return out;
}

template <typename T>
std::vector<PatchRecord<T>> extract_candidate_patches(const Tensor3<T>& image, const LabelMap& labels,
                                                      const Grid<T>& reliability, const Tensor3<T>& features,
                                                      const ProxyBank<T>& bank, int min_area) {
    return extract_candidate_patches(image, labels, reliability, proxy_distance_map(features, labels, bank), min_area);
}

/// Enqueues the patch (evicting the oldest when full) iff its mean metric
/// distance falls strictly below `threshold`.
template <typename T>
bool admit(PatchBuffer<T>& buffers, PatchRecord<T> patch, double threshold) {
    if (patch.cls < 0 || patch.cls >= static_cast<int>(buffers.queues.size()))
        throw RangeError("admit: patch class out of range");
    if (!(patch.mean_distance < threshold)) return false;
    auto& q = buffers.queues[patch.cls];
    while (static_cast<int>(q.size()) >= buffers.capacity) q.pop_front();
    q.push_back(std::move(patch));
    return true;
}

template <typename T>
struct MixResult {
    Tensor3<T> image;
    LabelMap labels;
    Grid<T> reliability;
    Grid<std::uint8_t> pasted;  // union of pasted masks
    std::vector<int> classes;   // pasted classes in paste order
};

/// Pastes one random buffered patch from each of up to `max_classes`
/// randomly chosen non-empty classes at its stored origin. Later pastes
/// overwrite earlier ones; unmasked pixels are left untouched.
template <typename T>
MixResult<T> sample_mix(Tensor3<T> image, LabelMap labels, Grid<T> reliability, const PatchBuffer<T>& buffers,
                        int max_classes, Rng& rng) {
    const int h = labels.height, w = labels.width;
    if (image.height != h || image.width != w || !reliability.same_shape(h, w))
        throw ShapeError("sample_mix: inputs are not spatially aligned");
    MixResult<T> out{std::move(image), std::move(labels), std::move(reliability), Grid<std::uint8_t>(h, w, 0), {}};
    std::vector<int> candidates;
    for (int c = 0; c < static_cast<int>(buffers.queues.size()); ++c)
        if (!buffers.queues[c].empty()) candidates.push_back(c);
    std::shuffle(candidates.begin(), candidates.end(), rng);
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(std::max(max_classes, 0)), candidates.size());
    for (std::size_t k = 0; k < n; ++k) {
        const auto& q = buffers.queues[candidates[k]];
        const auto& rec = q[std::uniform_int_distribution<std::size_t>(0, q.size() - 1)(rng)];
        out.classes.push_back(rec.cls);
        for (int y = 0; y < rec.height(); ++y) {
            const int ty = rec.origin_y + y;
            if (ty < 0 || ty >= h) continue;
            for (int x = 0; x < rec.width(); ++x) {
                const int tx = rec.origin_x + x;
                if (tx < 0 || tx >= w || !rec.mask(y, x)) continue;
                out.image.data.row(ty * w + tx) = rec.image.data.row(y * rec.width() + x);
                out.labels(ty, tx) = rec.labels(y, x);
                out.reliability(ty, tx) = rec.reliability(y, x);
                out.pasted(ty, tx) = 1;
            }
        }
    }
    return out;
}

} // namespace stvm
