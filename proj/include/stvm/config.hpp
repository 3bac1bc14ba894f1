#pragma once

#include <charconv>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "data.hpp"
#include "error.hpp"
#include "segnet.hpp"
#include "trainer.hpp"

namespace stvm {

/// Synthetic benchmark description, or directories of real data.
struct BenchmarkConfig {
    int image_size = 64;
    int n_source = 200;
    int n_target = 400;
    int n_eval = 100;
    std::uint64_t seed = 2024;
    DomainSpec source;
    DomainSpec target;
    GeometrySpec source_geometry;
    GeometrySpec target_geometry;
    // when non-empty, datasets are read from disk instead of generated
    std::string source_dir;
    std::string target_dir;
    std::string eval_dir;
    std::string class_map;  // key-value file: raw id = class index
};

struct EvalConfig {
    bool mst = false;
    std::vector<double> scales{0.75, 1.0, 1.25};
    int silhouette_points = 2000;  // per image
    long interval = 500;           // iterations between metrics rows
};

struct ExperimentConfig {
    std::string profile = "desk";
    ArchConfig arch;
    TrainConfig train;
    BenchmarkConfig data;
    EvalConfig eval;
    std::string output_dir = "runs/default";
    std::vector<std::uint64_t> seeds{0, 1, 2};
};

namespace detail {

/// Shortest text that parses back to exactly `v`.
inline std::string fmt_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

inline std::vector<double> parse_doubles(const std::string& s, char sep = ',') {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, sep)) {
        if (tok.find_first_not_of(" \t") == std::string::npos) continue;
        std::size_t pos = 0;
        double v = 0;
        try {
            v = std::stod(tok, &pos);
        } catch (const std::exception&) {
            throw ConfigError("not a number: '" + tok + "'");
        }
        if (tok.find_first_not_of(" \t", pos) != std::string::npos) throw ConfigError("not a number: '" + tok + "'");
        out.push_back(v);
    }
    return out;
}

inline std::string join_doubles(const std::vector<double>& v, const char* sep = ",") {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + fmt_double(v[i]);
    return s;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    std::istringstream is(text);
    T v{};
    is >> v;
    std::string rest;
    if (!is || (is >> rest)) throw ConfigError(key + ": cannot parse '" + text + "'");
    return v;
}

/// Field codecs: (value → text) and (text → value).
inline std::string encode(int v) { return std::to_string(v); }
inline std::string encode(long v) { return std::to_string(v); }
inline std::string encode(std::uint64_t v) { return std::to_string(v); }
inline std::string encode(double v) { return fmt_double(v); }
inline std::string encode(bool v) { return v ? "true" : "false"; }
inline std::string encode(const std::string& v) { return v; }
inline std::string encode(const Flags& f) { return f.str(); }
inline std::string encode(const std::vector<double>& v) { return join_doubles(v); }
inline std::string encode(const std::optional<double>& v) { return v ? fmt_double(*v) : "none"; }
inline std::string encode(const std::vector<std::uint64_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}
inline std::string encode(const std::vector<Color>& palette) {
    std::string s;
    for (std::size_t i = 0; i < palette.size(); ++i)
        s += (i ? "; " : "") + join_doubles({palette[i][0], palette[i][1], palette[i][2]});
    return s;
}

inline void decode(const std::string& k, const std::string& t, int& v) { v = parse_number<int>(k, t); }
inline void decode(const std::string& k, const std::string& t, long& v) { v = parse_number<long>(k, t); }
inline void decode(const std::string& k, const std::string& t, std::uint64_t& v) {
    v = parse_number<std::uint64_t>(k, t);
}
inline void decode(const std::string& k, const std::string& t, double& v) { v = parse_number<double>(k, t); }
inline void decode(const std::string& k, const std::string& t, bool& v) {
    if (t == "true" || t == "1" || t == "on") v = true;
    else if (t == "false" || t == "0" || t == "off") v = false;
    else throw ConfigError(k + ": expected a boolean, got '" + t + "'");
}
inline void decode(const std::string&, const std::string& t, std::string& v) { v = t; }
inline void decode(const std::string&, const std::string& t, Flags& v) { v = Flags::parse(t); }
inline void decode(const std::string&, const std::string& t, std::vector<double>& v) { v = parse_doubles(t); }
inline void decode(const std::string& k, const std::string& t, std::optional<double>& v) {
    if (t == "none" || t.empty()) v.reset();
    else v = parse_number<double>(k, t);
}
inline void decode(const std::string& k, const std::string& t, std::vector<std::uint64_t>& v) {
    v.clear();
    for (double d : parse_doubles(t)) {
        if (d < 0 || d != static_cast<double>(static_cast<std::uint64_t>(d))) throw ConfigError(k + ": bad seed list");
        v.push_back(static_cast<std::uint64_t>(d));
    }
}
inline void decode(const std::string& k, const std::string& t, std::vector<Color>& palette) {
    palette.clear();
    std::stringstream ss(t);
    std::string entry;
    while (std::getline(ss, entry, ';')) {
        const auto rgb = parse_doubles(entry);
        if (rgb.empty()) continue;
        if (rgb.size() != 3) throw ConfigError(k + ": palette entries need three components");
        palette.push_back({rgb[0], rgb[1], rgb[2]});
    }
}

template <typename F>
void visit_domain(const std::string& prefix, DomainSpec& d, F&& f) {
    f(prefix + ".palette", d.palette);
    f(prefix + ".texture_frequency", d.texture_frequency);
    f(prefix + ".texture_amplitude", d.texture_amplitude);
    f(prefix + ".gain", d.gain);
    f(prefix + ".bias", d.bias);
    f(prefix + ".gain_jitter", d.gain_jitter);
    f(prefix + ".bias_jitter", d.bias_jitter);
    f(prefix + ".color_jitter", d.color_jitter);
    f(prefix + ".noise_sigma", d.noise_sigma);
    f(prefix + ".blur_sigma", d.blur_sigma);
}

template <typename F>
void visit_geometry(const std::string& prefix, GeometrySpec& g, F&& f) {
    f(prefix + ".min_shapes", g.min_shapes);
    f(prefix + ".max_shapes", g.max_shapes);
    f(prefix + ".min_size_frac", g.min_size_frac);
    f(prefix + ".max_size_frac", g.max_size_frac);
    f(prefix + ".class_weights", g.class_weights);
}

} // namespace detail

/// Visits every configurable field as (dotted key, reference).
template <typename F>
void visit_fields(ExperimentConfig& c, F&& f) {
    f("experiment.profile", c.profile);
    f("experiment.output_dir", c.output_dir);
    f("experiment.seeds", c.seeds);

    f("arch.num_classes", c.arch.num_classes);
    f("arch.feature_dim", c.arch.feature_dim);
    f("arch.metric_dim", c.arch.metric_dim);
    f("arch.base_width", c.arch.base_width);

    auto& t = c.train;
    f("train.flags", t.flags);
    f("train.temperature", t.temperature);
    f("train.metric_quantile", t.metric_quantile);
    f("train.threshold_momentum", t.threshold_momentum);
    f("train.cap_per_class", t.cap_per_class);
    f("train.alpha", t.alpha);
    f("train.beta", t.beta);
    f("train.buffer_capacity", t.buffer_capacity);
    f("train.tau_mocm", t.tau_mocm);
    f("train.n_mocm", t.n_mocm);
    f("train.min_patch_area", t.min_patch_area);
    f("train.lr_feature", t.lr_feature);
    f("train.lr_classifier", t.lr_classifier);
    f("train.lr_metric", t.lr_metric);
    f("train.momentum", t.momentum);
    f("train.weight_decay", t.weight_decay);
    f("train.poly_power", t.poly_power);
    f("train.teacher_period", t.teacher_period);
    f("train.teacher_smoothing", t.teacher_smoothing);
    f("train.iterations", t.iterations);
    f("train.batch_size", t.batch_size);
    f("train.crop_size", t.crop_size);
    f("train.seed", t.seed);
    f("train.st_quantile", t.st_quantile);
    f("train.source_iterations", t.source_iterations);
    f("train.source_lr", t.source_lr);
    f("train.source_batch_size", t.source_batch_size);

    auto& p = t.photo;
    f("photo.brightness_lo", p.brightness_lo);
    f("photo.brightness_hi", p.brightness_hi);
    f("photo.contrast_lo", p.contrast_lo);
    f("photo.contrast_hi", p.contrast_hi);
    f("photo.saturation_lo", p.saturation_lo);
    f("photo.saturation_hi", p.saturation_hi);
    f("photo.hue_lo", p.hue_lo);
    f("photo.hue_hi", p.hue_hi);
    f("photo.blur_prob", p.blur_prob);
    f("photo.blur_sigma_lo", p.blur_sigma_lo);
    f("photo.blur_sigma_hi", p.blur_sigma_hi);

    auto& d = c.data;
    f("data.image_size", d.image_size);
    f("data.n_source", d.n_source);
    f("data.n_target", d.n_target);
    f("data.n_eval", d.n_eval);
    f("data.seed", d.seed);
    f("data.source_dir", d.source_dir);
    f("data.target_dir", d.target_dir);
    f("data.eval_dir", d.eval_dir);
    f("data.class_map", d.class_map);
    detail::visit_domain("source", d.source, f);
    detail::visit_domain("target", d.target, f);
    detail::visit_geometry("source_geometry", d.source_geometry, f);
    detail::visit_geometry("target_geometry", d.target_geometry, f);

    f("eval.mst", c.eval.mst);
    f("eval.scales", c.eval.scales);
    f("eval.silhouette_points", c.eval.silhouette_points);
    f("eval.interval", c.eval.interval);
}

/// Short names accepted by `sweep` and `--set`, e.g. `alpha` → `train.alpha`.
inline std::string resolve_key(const std::string& key) {
    if (key.find('.') != std::string::npos) return key;
    if (key == "metric_dim" || key == "nf" || key == "N_f") return "arch.metric_dim";
    if (key == "q_m" || key == "q_M" || key == "qm") return "train.metric_quantile";
    if (key == "T") return "train.temperature";
    if (key == "n_MOCM") return "train.n_mocm";
    if (key == "tau_MOCM") return "train.tau_mocm";
    if (key == "quantile") return "train.st_quantile";
    return "train." + key;
}

inline void set_field(ExperimentConfig& c, const std::string& key, const std::string& value) {
    const std::string full = resolve_key(key);
    bool found = false;
    visit_fields(c, [&](const std::string& k, auto& v) {
        if (k == full) {
            detail::decode(k, value, v);
            found = true;
        }
    });
    if (!found) throw ConfigError("unknown configuration key '" + key + "'");
}

inline std::string get_field(ExperimentConfig& c, const std::string& key) {
    const std::string full = resolve_key(key);
    std::optional<std::string> out;
    visit_fields(c, [&](const std::string& k, auto& v) {
        if (k == full) out = detail::encode(v);
    });
    if (!out) throw ConfigError("unknown configuration key '" + key + "'");
    return *out;
}

/// Desk-scale defaults: 64×64 synthetic shapes, batch 4, faster teacher.
inline ExperimentConfig desk_profile() {
    ExperimentConfig c;
    c.profile = "desk";
    c.arch = ArchConfig{6, 64, 128, 16};

    TrainConfig& t = c.train;
    t.teacher_period = 10;
    t.teacher_smoothing = 0.05;
    t.iterations = 1000;
    t.lr_feature = 5e-5;
    t.lr_classifier = 5e-4;
    t.lr_metric = 3e-3;
    t.n_mocm = 3;  // about half of the six classes per mix
    t.photo.brightness_lo = 0.85;
    t.photo.brightness_hi = 1.15;
    t.photo.contrast_lo = 0.85;
    t.photo.contrast_hi = 1.15;
    t.photo.hue_lo = -0.05;
    t.photo.hue_hi = 0.05;
    t.photo.blur_prob = 0.2;
    t.photo.blur_sigma_hi = 0.5;
    t.batch_size = 4;
    t.crop_size = 64;
    t.source_iterations = 1500;
    t.source_lr = 2e-3;
    t.source_batch_size = 4;

    BenchmarkConfig& d = c.data;
    d.source.palette = {{0.45, 0.45, 0.45}, {0.85, 0.15, 0.15}, {0.15, 0.70, 0.20},
                        {0.20, 0.30, 0.85}, {0.90, 0.85, 0.20}, {0.75, 0.25, 0.80}};
    d.source.texture_amplitude = 0.05;
    d.source.noise_sigma = 0.02;
    d.target.palette = {{0.40, 0.42, 0.50}, {0.80, 0.45, 0.15}, {0.35, 0.70, 0.55},
                        {0.45, 0.30, 0.80}, {0.70, 0.75, 0.35}, {0.80, 0.35, 0.55}};
    d.target.texture_amplitude = 0.10;
    d.target.gain = 0.9;
    d.target.gain_jitter = 0.3;
    d.target.bias_jitter = 0.08;
    d.target.color_jitter = 0.05;
    d.target.noise_sigma = 0.05;
    d.target.blur_sigma = 0.6;

    for (GeometrySpec* g : {&d.source_geometry, &d.target_geometry}) {
        g->min_shapes = 2;
        g->max_shapes = 3;
        g->min_size_frac = 0.38;
        g->max_size_frac = 0.55;
    }

    c.eval.silhouette_points = 300;
    c.eval.interval = 500;
    c.output_dir = "runs/desk";
    return c;
}

/// Hyper-parameters as used at full scale (1024×512 resized, 512 crops).
inline ExperimentConfig paper_profile() {
    ExperimentConfig c = desk_profile();
    c.profile = "paper";
    c.arch.metric_dim = 128;
    c.train = TrainConfig{};
    c.train.photo = desk_profile().train.photo;
    c.eval.silhouette_points = 2000;
    return c;
}

inline ExperimentConfig profile_defaults(const std::string& name) {
    if (name == "desk") return desk_profile();
    if (name == "paper") return paper_profile();
    throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
}

/// Applies every key of an INI tree onto `c`; unknown keys are errors.
inline void apply_tree(ExperimentConfig& c, const boost::property_tree::ptree& tree) {
    for (const auto& [section, body] : tree) {
        if (body.empty()) throw ConfigError("configuration key '" + section + "' must live inside a [section]");
        for (const auto& [key, value] : body) set_field(c, section + "." + key, value.data());
    }
}

inline boost::property_tree::ptree read_ini(const std::string& path) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::read_ini(path, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(std::string("cannot parse config: ") + e.what());
    }
    return tree;
}

/// profile defaults < config file < explicit overrides. The profile is taken
/// from overrides first, then from the file's [experiment] section.
inline ExperimentConfig resolve_config(const std::string& path, const std::vector<std::pair<std::string, std::string>>& overrides,
                                       std::optional<std::string> profile = std::nullopt) {
    boost::property_tree::ptree tree;
    if (!path.empty()) tree = read_ini(path);
    if (!profile) profile = tree.get_optional<std::string>("experiment.profile").value_or("desk");
    ExperimentConfig c = profile_defaults(*profile);
    apply_tree(c, tree);
    c.profile = *profile;
    for (const auto& [k, v] : overrides) set_field(c, k, v);
    c.arch.validate();
    c.train.validate();
    return c;
}

inline void write_config(ExperimentConfig c, const std::string& path) {
    boost::property_tree::ptree tree;
    visit_fields(c, [&](const std::string& k, auto& v) { tree.put(k, detail::encode(v)); });
    try {
        boost::property_tree::write_ini(path, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw IoError(std::string("cannot write config: ") + e.what());
    }
}

/// `raw = class` lines (INI without sections) plus an optional
/// `num_classes = N` entry.
inline ClassMapping read_class_mapping(const std::string& path, int default_classes) {
    ClassMapping m;
    m.num_classes = default_classes;
    if (path.empty()) return m;
    const auto tree = read_ini(path);
    for (const auto& [key, value] : tree) {
        if (!value.empty()) throw ConfigError("class map must be a flat key = value list");
        if (key == "num_classes") {
            m.num_classes = detail::parse_number<int>(key, value.data());
            continue;
        }
        m.raw_to_class[detail::parse_number<int>(key, key)] = detail::parse_number<int>(key, value.data());
    }
    return m;
}

} // namespace stvm
