#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "augment.hpp"
#include "error.hpp"
#include "png_io.hpp"
#include "rng.hpp"
#include "segnet.hpp"
#include "tensor.hpp"

namespace stvm {

using Color = std::array<double, 3>;

/// Appearance of one synthetic domain. Geometry is governed separately by
/// `GeometrySpec` so two domains can share label maps exactly.
struct DomainSpec {
    std::vector<Color> palette;          // per class; entry 0 is the background
    double texture_frequency = 3.0;      // background stripe cycles per image
    double texture_amplitude = 0.05;
    double gain = 1.0;                   // global illumination
    double bias = 0.0;
    double gain_jitter = 0.0;            // per-image uniform ± jitter
    double bias_jitter = 0.0;
    double color_jitter = 0.0;           // per-shape, per-channel ± jitter
    double noise_sigma = 0.0;
    double blur_sigma = 0.0;

    void validate(int num_classes) const {
        if (static_cast<int>(palette.size()) < num_classes)
            throw ConfigError("domain: palette needs one colour per class");
        for (const auto& c : palette)
            for (double v : c)
                if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("domain: palette colours must lie in [0, 1]");
        if (noise_sigma < 0 || blur_sigma < 0 || texture_amplitude < 0 || gain_jitter < 0 || bias_jitter < 0 ||
            color_jitter < 0)
            throw ConfigError("domain: sigmas, amplitudes and jitters must be >= 0");
    }
};

enum class ShapeKind { circle, square, triangle, bar, diamond };
inline constexpr int kShapeKinds = 5;

/// Class k ≥ 1 is drawn as shape kind (k − 1) mod 5.
inline ShapeKind shape_kind_for_class(int cls) { return static_cast<ShapeKind>((cls - 1) % kShapeKinds); }

struct ShapeSpec {
    int cls = 1;
    double cy = 0, cx = 0;   // centre, pixel units
    double size = 0;         // extent of the bounding square
    bool vertical = false;   // bars only
};

/// Does the pixel centre (y + ½, x + ½) fall inside the shape?
inline bool shape_contains(const ShapeSpec& s, int y, int x) {
    const double py = y + 0.5 - s.cy, px = x + 0.5 - s.cx;
    const double half = s.size / 2.0;
    switch (shape_kind_for_class(s.cls)) {
    case ShapeKind::circle: return px * px + py * py <= half * half;
    case ShapeKind::square: return std::abs(px) <= half && std::abs(py) <= half;
    case ShapeKind::triangle: return py >= -half && py <= half && std::abs(px) <= (py + half) / 2.0;
    case ShapeKind::bar: {
        const double along = s.vertical ? py : px, across = s.vertical ? px : py;
        return std::abs(along) <= half && std::abs(across) <= s.size / 4.0;
    }
    case ShapeKind::diamond: return std::abs(px) + std::abs(py) <= half;
    }
    return false;
}

/// Layout distribution shared by paired domains.
struct GeometrySpec {
    int min_shapes = 1;
    int max_shapes = 4;
    double min_size_frac = 0.22;   // shape extent as a fraction of the image side
    double max_size_frac = 0.40;
    std::vector<double> class_weights;  // relative frequency of classes 1..C−1; empty = uniform
};

struct DataItem {
    std::string name;
    Image image;
    std::optional<LabelMap> labels;
    std::vector<ShapeSpec> shapes;
};

struct Dataset {
    std::vector<DataItem> items;
    int num_classes = 0;
    std::string split;

    std::size_t size() const { return items.size(); }
    const DataItem& operator[](std::size_t i) const { return items[i]; }
};

inline LabelMap rasterize(const std::vector<ShapeSpec>& shapes, int size) {
    LabelMap labels(size, size, 0);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (const auto& s : shapes)
                if (shape_contains(s, y, x)) {
                    labels(y, x) = static_cast<std::uint8_t>(s.cls);
                    break;
                }
    return labels;
}

namespace detail {

inline std::vector<ShapeSpec> draw_layout(const GeometrySpec& geo, int size, int num_classes, int forced_class,
                                          Rng& rng) {
    std::vector<double> weights = geo.class_weights;
    if (weights.empty()) weights.assign(static_cast<std::size_t>(num_classes - 1), 1.0);
    if (static_cast<int>(weights.size()) != num_classes - 1)
        throw ConfigError("geometry: class_weights needs one entry per foreground class");
    std::discrete_distribution<int> pick_class(weights.begin(), weights.end());
    const int count = uniform_int(rng, geo.min_shapes, geo.max_shapes);
    std::vector<ShapeSpec> shapes;
    constexpr double margin = 2.0;
    for (int k = 0; k < count; ++k) {
        ShapeSpec s;
        s.cls = (k == 0 && forced_class > 0) ? forced_class : 1 + pick_class(rng);
        bool placed = false;
        for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
            s.size = uniform<double>(rng, geo.min_size_frac * size, geo.max_size_frac * size);
            const double half = s.size / 2.0;
            s.cy = uniform<double>(rng, half + 1.0, size - half - 1.0);
            s.cx = uniform<double>(rng, half + 1.0, size - half - 1.0);
            s.vertical = uniform<double>(rng, 0.0, 1.0) < 0.5;
            placed = std::all_of(shapes.begin(), shapes.end(), [&](const ShapeSpec& o) {
                const double reach = (s.size + o.size) / 2.0 + margin;
                return std::abs(s.cy - o.cy) > reach || std::abs(s.cx - o.cx) > reach;
            });
        }
        if (placed) shapes.push_back(s);
    }
    return shapes;
}

inline Image render(const DomainSpec& spec, const std::vector<ShapeSpec>& shapes, const LabelMap& labels, int size,
                    Rng& rng) {
    const double gain = spec.gain + uniform<double>(rng, -spec.gain_jitter, spec.gain_jitter);
    const double bias = spec.bias + uniform<double>(rng, -spec.bias_jitter, spec.bias_jitter);
    const double angle = uniform<double>(rng, 0.0, std::numbers::pi);
    const double phase = uniform<double>(rng, 0.0, 2.0 * std::numbers::pi);
    std::vector<Color> shape_color(shapes.size());
    for (std::size_t k = 0; k < shapes.size(); ++k)
        for (int c = 0; c < 3; ++c)
            shape_color[k][c] =
                spec.palette[shapes[k].cls][c] + uniform<double>(rng, -spec.color_jitter, spec.color_jitter);
    std::normal_distribution<double> noise(0.0, 1.0);
    const double omega = 2.0 * std::numbers::pi * spec.texture_frequency / size;
    Image img(size, size, 3);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const int cls = labels(y, x);
            Color col;
            if (cls == 0) {
                const double t = spec.texture_amplitude *
                                 std::sin(omega * (x * std::cos(angle) + y * std::sin(angle)) + phase);
                for (int c = 0; c < 3; ++c) col[c] = spec.palette[0][c] + t;
            } else {
                std::size_t k = 0;
                while (k < shapes.size() && !shape_contains(shapes[k], y, x)) ++k;
                col = shape_color[std::min(k, shapes.size() - 1)];
            }
            for (int c = 0; c < 3; ++c) {
                double v = gain * col[c] + bias;
                if (spec.noise_sigma > 0) v += spec.noise_sigma * noise(rng);
                img.at(y, x, c) = static_cast<float>(v);
            }
        }
    if (spec.blur_sigma > 0) img = gaussian_blur(img, spec.blur_sigma);
    img.data = img.data.cwiseMax(0.0f).cwiseMin(1.0f);
    return img;
}

} // namespace detail

/// Seeded synthetic segmentation set: 1–4 non-overlapping shapes on a
/// textured background with pixel-exact labels. Layout depends only on
/// (geometry, n, size, num_classes, seed); `spec` controls appearance. The
/// first num_classes − 1 images each contain one forced class, so every class
/// is covered whenever n ≥ num_classes − 1.
inline Dataset gen_shiftshapes(const DomainSpec& spec, const GeometrySpec& geo, int n, int size, int num_classes,
                               std::uint64_t seed, const std::string& split = "synthetic") {
    if (num_classes < 2 || num_classes > 254) throw ConfigError("gen_shiftshapes: num_classes must lie in [2, 254]");
    if (n < 1) throw ConfigError("gen_shiftshapes: n must be >= 1");
    if (size < ArchConfig::stride || size % ArchConfig::stride != 0)
        throw ConfigError("gen_shiftshapes: size must be a positive multiple of the network stride");
    if (geo.min_shapes < 1 || geo.max_shapes < geo.min_shapes) throw ConfigError("geometry: bad shape count range");
    spec.validate(num_classes);
    Rng geometry = make_stream(seed, "data.geometry");
    Rng appearance = make_stream(seed, "data.appearance");
    Dataset ds;
    ds.num_classes = num_classes;
    ds.split = split;
    for (int i = 0; i < n; ++i) {
        const int forced = i < num_classes - 1 ? i + 1 : 0;
        DataItem item;
        char name[32];
        std::snprintf(name, sizeof(name), "%06d", i);
        item.name = name;
        item.shapes = detail::draw_layout(geo, size, num_classes, forced, geometry);
        LabelMap labels = rasterize(item.shapes, size);
        item.image = detail::render(spec, item.shapes, labels, size, appearance);
        item.labels = std::move(labels);
        ds.items.push_back(std::move(item));
    }
    return ds;
}

/// Raw label id → contiguous class index. Ids absent from a non-empty
/// mapping become `kIgnoreLabel`; an empty mapping keeps ids below
/// `num_classes` as they are.
struct ClassMapping {
    int num_classes = 0;
    std::map<int, int> raw_to_class;

    std::uint8_t map(int raw) const {
        if (raw_to_class.empty()) return raw < num_classes ? static_cast<std::uint8_t>(raw) : kIgnoreLabel;
        auto it = raw_to_class.find(raw);
        return it == raw_to_class.end() ? kIgnoreLabel : static_cast<std::uint8_t>(it->second);
    }
};

/// Reads `root/images/*.png` and, when present, `root/labels/*.png` matched
/// by file stem, in stem order.
inline Dataset load_dataset(const std::filesystem::path& root, const ClassMapping& mapping,
                            const std::string& split = "loaded") {
    namespace fs = std::filesystem;
    if (mapping.num_classes < 2) throw ConfigError("load_dataset: mapping must declare num_classes >= 2");
    for (const auto& [raw, cls] : mapping.raw_to_class)
        if (cls < 0 || cls >= mapping.num_classes) throw ConfigError("load_dataset: mapped class out of range");
    const fs::path images = root / "images", labels = root / "labels";
    if (!fs::is_directory(images)) throw IoError("missing images directory: " + images.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(images))
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) { return a.stem() < b.stem(); });
    Dataset ds;
    ds.num_classes = mapping.num_classes;
    ds.split = split;
    for (const auto& f : files) {
        DataItem item;
        item.name = f.stem().string();
        item.image = read_png_rgb(f.string());
        const fs::path lf = labels / (item.name + ".png");
        if (fs::exists(lf)) {
            LabelMap raw = read_png_gray(lf.string());
            if (!raw.same_shape(item.image.height, item.image.width))
                throw DataError("image/label size mismatch for " + item.name);
            for (auto& v : raw.values) v = mapping.map(v);
            item.labels = std::move(raw);
        }
        ds.items.push_back(std::move(item));
    }
    return ds;
}

/// Writes the same `root/{images,labels}` layout `load_dataset` reads.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    fs::create_directories(root / "images");
    bool any_labels = false;
    for (const auto& item : ds.items) any_labels |= item.labels.has_value();
    if (any_labels) fs::create_directories(root / "labels");
    for (const auto& item : ds.items) {
        write_png_rgb((root / "images" / (item.name + ".png")).string(), item.image);
        if (item.labels) write_png_gray((root / "labels" / (item.name + ".png")).string(), *item.labels);
    }
}

} // namespace stvm
