#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "data.hpp"
#include "eval.hpp"
#include "metric.hpp"
#include "trainer.hpp"

namespace stvm {

struct Benchmark {
    Dataset source;
    Dataset target;  // unlabeled during adaptation
    Dataset eval;    // labeled target images held out for scoring
};

/// Generates the synthetic benchmark, or loads the configured directories.
inline Benchmark load_benchmark(const ExperimentConfig& c) {
    const auto& d = c.data;
    const int C = c.arch.num_classes;
    Benchmark b;
    if (!d.source_dir.empty() || !d.target_dir.empty() || !d.eval_dir.empty()) {
        if (d.source_dir.empty() || d.target_dir.empty() || d.eval_dir.empty())
            throw ConfigError("data: source_dir, target_dir and eval_dir must be given together");
        const ClassMapping mapping = read_class_mapping(d.class_map, C);
        if (mapping.num_classes != C) throw ConfigError("data: class map and arch.num_classes disagree");
        b.source = load_dataset(d.source_dir, mapping, "source");
        b.target = load_dataset(d.target_dir, mapping, "target");
        b.eval = load_dataset(d.eval_dir, mapping, "eval");
        return b;
    }
    b.source = gen_shiftshapes(d.source, d.source_geometry, d.n_source, d.image_size, C, d.seed, "source");
    b.target = gen_shiftshapes(d.target, d.target_geometry, d.n_target, d.image_size, C, d.seed + 1, "target");
    b.eval = gen_shiftshapes(d.target, d.target_geometry, d.n_eval, d.image_size, C, d.seed + 2, "eval");
    for (auto& item : b.target.items) item.labels.reset();
    return b;
}

struct EvalResult {
    IoUReport iou;
    std::optional<double> silhouette;             // overall mean ×100
    std::optional<double> silhouette_class_mean;  // mean of class means ×100
};

inline LabelMap argmax_labels(const Tensor3<float>& logits) {
    LabelMap out(logits.height, logits.width);
    for (int i = 0; i < logits.pixels(); ++i) {
        Eigen::Index best;
        logits.data.row(i).maxCoeff(&best);
        out[i] = static_cast<std::uint8_t>(best);
    }
    return out;
}

/// mIoU of `net` on the labeled set, plus (when a metric head is given) the
/// silhouette of ground-truth classes in metric space, from at most
/// `silhouette_points` seeded pixels per image.
inline EvalResult evaluate(const NetworkParams<float>& net, const ArchConfig& arch, const Dataset& eval,
                           const EvalConfig& ec, const NetworkParams<float>* metric = nullptr,
                           std::uint64_t seed = 0) {
    EvalResult r;
    r.iou = IoUReport(arch.num_classes);
    std::vector<double> s_sum(static_cast<std::size_t>(arch.num_classes), 0.0);
    std::vector<long> s_cnt(static_cast<std::size_t>(arch.num_classes), 0);
    Rng rng = make_stream(seed, "eval.silhouette");
    for (const auto& item : eval.items) {
        if (!item.labels) throw DataError("evaluate: image " + item.name + " has no labels");
        const auto fwd = forward(net, arch, item.image);
        const Tensor3<float> logits =
            ec.mst ? multi_scale_predict(net, arch, item.image, ec.scales) : fwd.logits;
        r.iou.accumulate(argmax_labels(logits), *item.labels);
        if (!metric || ec.silhouette_points <= 0) continue;
        const auto m = forward_metric(*metric, arch, fwd.features);
        std::vector<int> pixels;
        for (int i = 0; i < item.labels->pixels(); ++i)
            if ((*item.labels)[i] != kIgnoreLabel) pixels.push_back(i);
        std::shuffle(pixels.begin(), pixels.end(), rng);
        if (static_cast<int>(pixels.size()) > ec.silhouette_points) pixels.resize(ec.silhouette_points);
        std::vector<int> labels;
        Matrix<float> pts(static_cast<Eigen::Index>(pixels.size()), arch.metric_dim);
        for (std::size_t k = 0; k < pixels.size(); ++k) {
            pts.row(static_cast<Eigen::Index>(k)) = m.full.data.row(pixels[k]);
            labels.push_back((*item.labels)[pixels[k]]);
        }
        if (std::count(labels.begin(), labels.end(), labels.empty() ? 0 : labels[0]) ==
            static_cast<long>(labels.size()))
            continue;  // a single cluster has no silhouette
        std::vector<double> per_point;
        silhouette(pts, labels, arch.num_classes, &per_point);
        for (std::size_t k = 0; k < labels.size(); ++k) {
            s_sum[labels[k]] += per_point[k];
            ++s_cnt[labels[k]];
        }
    }
    r.iou.finalize();
    long n = 0;
    double total = 0.0, class_total = 0.0;
    int classes = 0;
    for (int c = 0; c < arch.num_classes; ++c) {
        if (!s_cnt[c]) continue;
        n += s_cnt[c];
        total += s_sum[c];
        class_total += 100.0 * s_sum[c] / static_cast<double>(s_cnt[c]);
        ++classes;
    }
    if (n > 0) {
        r.silhouette = 100.0 * total / static_cast<double>(n);
        r.silhouette_class_mean = class_total / classes;
    }
    return r;
}

inline std::string fmt(double v, int precision = 6) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
    return buf;
}

inline std::string fmt(const std::optional<double>& v, int precision = 6) { return v ? fmt(*v, precision) : "nan"; }

/// Metrics stream columns: iter, iou_0..iou_{C−1}, miou, mean_reliability,
/// buffer_occupancy, silhouette.
inline std::string metrics_header(int num_classes) {
    std::string h = "iter";
    for (int c = 0; c < num_classes; ++c) h += ",iou_" + std::to_string(c);
    return h + ",miou,mean_reliability,buffer_occupancy,silhouette";
}

inline std::string metrics_row(long iter, const EvalResult& r, double mean_reliability, std::size_t occupancy) {
    std::string row = std::to_string(iter);
    for (const auto& v : r.iou.iou) row += "," + fmt(v);
    return row + "," + fmt(r.iou.miou) + "," + fmt(mean_reliability) + "," + std::to_string(occupancy) + "," +
           fmt(r.silhouette);
}

struct AdaptOptions {
    std::string metrics_csv;     // empty: no metrics stream
    std::string checkpoint_dir;  // empty: no checkpoints
    long checkpoint_interval = 0;
    bool resume = false;
    std::function<void(const StepStats&)> on_step;
};

struct AdaptResult {
    EvalResult final_eval;
    RunState state;
};

inline std::string latest_checkpoint(const std::string& dir) { return dir + "/latest.ckpt"; }

/// A full adaptation run from the source model: `iterations` adapt steps with
/// a metrics row every `eval.interval` iterations and at the end.
inline AdaptResult run_adaptation(const ExperimentConfig& c, const NetworkParams<float>& source, const Dataset& target,
                                  const Dataset& eval, const AdaptOptions& opt = {}) {
    const TrainConfig& t = c.train;
    RunState s = init_run_state(source, c.arch, t);
    std::ofstream csv;
    if (opt.resume && !opt.checkpoint_dir.empty() && std::filesystem::exists(latest_checkpoint(opt.checkpoint_dir))) {
        s = restore_run_state(Archive::load(latest_checkpoint(opt.checkpoint_dir)), c.arch, t);
        if (!opt.metrics_csv.empty()) {
            // keep the rows up to the checkpoint, drop any written after it
            std::vector<std::string> keep;
            std::ifstream in(opt.metrics_csv);
            for (std::string line; std::getline(in, line);) {
                if (keep.empty() || std::stol(line.substr(0, line.find(','))) <= s.iteration) keep.push_back(line);
            }
            in.close();
            csv.open(opt.metrics_csv, std::ios::trunc);
            for (const auto& line : keep) csv << line << '\n';
        }
    } else if (!opt.metrics_csv.empty()) {
        csv.open(opt.metrics_csv, std::ios::trunc);
        if (!csv) throw IoError("cannot write " + opt.metrics_csv);
        csv << metrics_header(c.arch.num_classes) << '\n';
    }
    double rel_sum = 0.0;
    long rel_n = 0;
    auto emit = [&](long iter) {
        EvalResult r = evaluate(eval_params(s, t), c.arch, eval, c.eval, &s.metric, t.seed);
        if (csv.is_open()) {
            csv << metrics_row(iter, r, rel_n ? rel_sum / rel_n : 1.0, s.buffers.occupancy()) << '\n';
            csv.flush();
        }
        rel_sum = 0.0;
        rel_n = 0;
        return r;
    };
    while (s.iteration < t.iterations) {
        const auto stats = adapt_step(s, adaptation_batch(target, t, s.iteration + 1), c.arch, t);
        rel_sum += stats.mean_reliability;
        ++rel_n;
        if (opt.on_step) opt.on_step(stats);
        if (c.eval.interval > 0 && s.iteration % c.eval.interval == 0 && s.iteration < t.iterations && csv.is_open())
            emit(s.iteration);
        if (!opt.checkpoint_dir.empty() && opt.checkpoint_interval > 0 && s.iteration % opt.checkpoint_interval == 0)
            run_state_archive(s, c.arch).save(latest_checkpoint(opt.checkpoint_dir));
    }
    AdaptResult out{emit(s.iteration), std::move(s)};
    if (!opt.checkpoint_dir.empty()) run_state_archive(out.state, c.arch).save(latest_checkpoint(opt.checkpoint_dir));
    return out;
}

/// One row of the component ablation ladder.
struct AblationRow {
    std::string name;
    std::optional<Flags> flags;  // absent for the source-only row
    EvalResult eval;
};

inline std::vector<std::pair<std::string, std::optional<Flags>>> ablation_ladder() {
    return {
        {"Source", std::nullopt},
        {"ST", Flags{true, false, false, false, false}},
        {"ST_Aug", Flags{true, true, false, false, false}},
        {"ST_MT", Flags{true, true, true, false, false}},
        {"STvM_Raw", Flags{true, true, true, true, false}},
        {"STvM", Flags{true, true, true, true, true}},
    };
}

using ProgressFn = std::function<void(const std::string&)>;

/// Trains the source model for `c.train.seed` and runs the six ladder rows
/// from it.
inline std::vector<AblationRow> run_ablation(const ExperimentConfig& c, const Benchmark& bench,
                                             const ProgressFn& progress = {}) {
    const NetworkParams<float> source = train_source(bench.source, c.arch, c.train);
    std::vector<AblationRow> rows;
    for (const auto& [name, flags] : ablation_ladder()) {
        AblationRow row{name, flags, EvalResult{}};
        if (!flags) {
            row.eval = evaluate(source, c.arch, bench.eval, c.eval);
        } else {
            ExperimentConfig rc = c;
            rc.train.flags = *flags;
            row.eval = run_adaptation(rc, source, bench.target, bench.eval).final_eval;
        }
        if (progress) progress(name + " mIoU " + fmt(100.0 * row.eval.iou.miou, 2));
        rows.push_back(std::move(row));
    }
    return rows;
}

struct SweepRow {
    std::string parameter;
    std::string value;
    EvalResult eval;
};

/// One-parameter grid from a shared source model. `quantile` runs the plain
/// self-training baseline supervised by the top-q fraction of predictions.
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& c, const Benchmark& bench, const std::string& parameter,
                                       const std::vector<std::string>& values, const ProgressFn& progress = {},
                                       const NetworkParams<float>* source_model = nullptr) {
    const bool quantile = resolve_key(parameter) == "train.st_quantile";
    std::optional<NetworkParams<float>> trained;
    if (!source_model) trained = train_source(bench.source, c.arch, c.train);
    const NetworkParams<float>& source = source_model ? *source_model : *trained;
    std::vector<SweepRow> rows;
    for (const auto& v : values) {
        ExperimentConfig rc = c;
        if (quantile) rc.train.flags = Flags{true, false, false, false, false};
        set_field(rc, parameter, v);
        rc.arch.validate();
        rc.train.validate();
        SweepRow row{parameter, v, run_adaptation(rc, source, bench.target, bench.eval).final_eval};
        if (progress) progress(parameter + "=" + v + " mIoU " + fmt(100.0 * row.eval.iou.miou, 2));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << "name,flags,miou,delta,silhouette,silhouette_class_mean\n";
    double prev = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double m = 100.0 * rows[i].eval.iou.miou;
        std::string flags = rows[i].flags ? rows[i].flags->str() : "";
        std::replace(flags.begin(), flags.end(), ',', '+');  // keep the column comma-free
        os << rows[i].name << ',' << flags << ',' << fmt(m, 4) << ','
           << (i ? fmt(m - prev, 4) : "") << ',' << fmt(rows[i].eval.silhouette, 4) << ','
           << fmt(rows[i].eval.silhouette_class_mean, 4) << '\n';
        prev = m;
    }
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
    std::string out = "Name      | ST Aug MT MGS MOCM |  mIoU  |  Delta | Silhouette\n";
    out += "----------+--------------------+--------+--------+-----------\n";
    double prev = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        const Flags f = r.flags.value_or(Flags{false, false, false, false, false});
        auto mark = [](bool b) { return b ? "x" : "-"; };
        char line[256];
        const double m = 100.0 * r.eval.iou.miou;
        std::snprintf(line, sizeof(line), "%-9s |  %s   %s  %s   %s   %s  | %6.2f | %6s | %s\n", r.name.c_str(),
                      mark(f.st), mark(f.aug), mark(f.mt), mark(f.mgs), mark(f.mocm), m,
                      i ? fmt(m - prev, 2).c_str() : "-", fmt(r.eval.silhouette, 1).c_str());
        out += line;
        prev = m;
    }
    return out;
}

inline void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows, int num_classes) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << "parameter,value,miou";
    for (int c = 0; c < num_classes; ++c) os << ",iou_" << c;
    os << ",silhouette\n";
    for (const auto& r : rows) {
        os << r.parameter << ',' << r.value << ',' << fmt(100.0 * r.eval.iou.miou, 4);
        for (const auto& v : r.eval.iou.iou) os << ',' << fmt(v ? std::optional<double>(100.0 * *v) : std::nullopt, 4);
        os << ',' << fmt(r.eval.silhouette, 4) << '\n';
    }
}

} // namespace stvm
