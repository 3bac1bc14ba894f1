// Command-line front end: gen-data, train-source, adapt, eval, sweep, ablate.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "stvm/stvm.hpp"

namespace fs = std::filesystem;
using namespace stvm;

namespace {

void log(const std::string& msg) { std::cerr << "[stvm] " << msg << std::endl; }

/// Advisory lock on <dir>/.lock, held until the process exits.
void lock_output_dir(const fs::path& dir) {
    fs::create_directories(dir);
    const std::string path = (dir / ".lock").string();
    const int fd = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd < 0) throw IoError("cannot open lock file " + path);
    if (::flock(fd, LOCK_EX | LOCK_NB) != 0)
        throw IoError("output directory " + dir.string() + " is in use by another stvm process");
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

struct Options {
    std::string config;
    std::string profile;
    std::optional<std::uint64_t> seed;
    std::string flags;
    bool mst = false;
    std::vector<std::string> sets;
    std::string output_dir;
};

ExperimentConfig resolve(const Options& o) {
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& s : o.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
        overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    if (o.seed) overrides.emplace_back("train.seed", std::to_string(*o.seed));
    if (!o.flags.empty()) overrides.emplace_back("train.flags", o.flags);
    if (o.mst) overrides.emplace_back("eval.mst", "true");
    if (!o.output_dir.empty()) overrides.emplace_back("experiment.output_dir", o.output_dir);
    return resolve_config(o.config, overrides, o.profile.empty() ? std::nullopt : std::optional(o.profile));
}

/// Locks the output directory and writes the resolved-config snapshot.
fs::path prepare(const ExperimentConfig& c, const std::string& snapshot_name) {
    const fs::path dir = c.output_dir;
    lock_output_dir(dir);
    write_config(c, (dir / snapshot_name).string());
    return dir;
}

fs::path source_checkpoint(const ExperimentConfig& c) {
    return fs::path(c.output_dir) / ("source_seed" + std::to_string(c.train.seed) + ".ckpt");
}

NetworkParams<float> obtain_source(const ExperimentConfig& c, const Benchmark& bench, const std::string& explicit_path) {
    const fs::path path = explicit_path.empty() ? source_checkpoint(c) : fs::path(explicit_path);
    if (fs::exists(path)) {
        auto loaded = load_network(path.string());
        if (!(loaded.arch == c.arch)) throw ConfigError("source checkpoint architecture differs from the config");
        log("source model: " + path.string());
        return loaded.params;
    }
    if (!explicit_path.empty()) throw DataError("missing checkpoint " + path.string());
    log("training source model (" + std::to_string(c.train.source_iterations) + " iterations)");
    auto net = train_source(bench.source, c.arch, c.train);
    save_network(path.string(), net, c.arch, c.train.seed, c.train.source_iterations);
    return net;
}

void print_eval(const EvalResult& r) {
    for (std::size_t k = 0; k < r.iou.iou.size(); ++k)
        std::cout << "iou_" << k << " " << fmt(r.iou.iou[k] ? std::optional(100.0 * *r.iou.iou[k]) : std::nullopt, 2)
                  << "\n";
    std::cout << "miou " << fmt(100.0 * r.iou.miou, 2) << "\n";
    if (r.silhouette) std::cout << "silhouette " << fmt(r.silhouette, 2) << "\n";
}

int cmd_gen_data(const Options& o, const std::string& out) {
    const ExperimentConfig c = resolve(o);
    const fs::path root = out.empty() ? fs::path(c.output_dir) / "data" : fs::path(out);
    lock_output_dir(root);
    write_config(c, (root / "config.ini").string());
    ExperimentConfig synth = c;
    synth.data.source_dir.clear();
    synth.data.target_dir.clear();
    synth.data.eval_dir.clear();
    Benchmark b = load_benchmark(synth);
    // the adaptation split is written with labels so it can be inspected
    b.target = gen_shiftshapes(c.data.target, c.data.target_geometry, c.data.n_target, c.data.image_size,
                               c.arch.num_classes, c.data.seed + 1, "target");
    save_dataset(b.source, root / "source");
    save_dataset(b.target, root / "target");
    save_dataset(b.eval, root / "eval");
    log("wrote " + std::to_string(b.source.size() + b.target.size() + b.eval.size()) + " images to " + root.string());
    return 0;
}

int cmd_train_source(const Options& o) {
    const ExperimentConfig c = resolve(o);
    prepare(c, "config_source_seed" + std::to_string(c.train.seed) + ".ini");
    const Benchmark bench = load_benchmark(c);
    const auto t0 = std::chrono::steady_clock::now();
    const auto net = train_source(bench.source, c.arch, c.train);
    save_network(source_checkpoint(c).string(), net, c.arch, c.train.seed, c.train.source_iterations);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log("source model trained in " + fmt(secs, 1) + " s: " + source_checkpoint(c).string());
    print_eval(evaluate(net, c.arch, bench.eval, c.eval));
    return 0;
}

int cmd_adapt(const Options& o, const std::string& source_path, bool resume, long checkpoint_interval) {
    const ExperimentConfig c = resolve(o);
    const fs::path run_dir = fs::path(c.output_dir) / ("adapt_seed" + std::to_string(c.train.seed));
    lock_output_dir(c.output_dir);
    fs::create_directories(run_dir);
    write_config(c, (run_dir / "config.ini").string());
    const Benchmark bench = load_benchmark(c);
    const auto source = obtain_source(c, bench, source_path);
    AdaptOptions opt;
    opt.metrics_csv = (run_dir / "metrics.csv").string();
    opt.checkpoint_dir = run_dir.string();
    opt.checkpoint_interval = checkpoint_interval > 0 ? checkpoint_interval : c.eval.interval;
    opt.resume = resume;
    const long total = c.train.iterations;
    opt.on_step = [total](const StepStats& s) {
        if (s.iteration % 100 == 0 || s.iteration == total)
            log("iter " + std::to_string(s.iteration) + "/" + std::to_string(total) + " loss " +
                fmt(s.student_loss, 4) + " metric " + fmt(s.metric_loss, 4) + " rel " + fmt(s.mean_reliability, 3));
    };
    log("adapting with flags " + c.train.flags.str());
    const auto result = run_adaptation(c, source, bench.target, bench.eval, opt);
    save_network((run_dir / "final.ckpt").string(), eval_params(result.state, c.train), c.arch, c.train.seed,
                 result.state.iteration);
    print_eval(result.final_eval);
    return 0;
}

int cmd_eval(const Options& o, const std::string& checkpoint) {
    const ExperimentConfig c = resolve(o);
    const std::string path = checkpoint.empty()
                                 ? (fs::path(c.output_dir) / ("adapt_seed" + std::to_string(c.train.seed)) / "final.ckpt").string()
                                 : checkpoint;
    if (!fs::exists(path)) throw DataError("missing checkpoint " + path);
    const auto loaded = load_network(path);
    if (!(loaded.arch == c.arch)) throw ConfigError("checkpoint architecture differs from the config");
    const Benchmark bench = load_benchmark(c);
    print_eval(evaluate(loaded.params, loaded.arch, bench.eval, c.eval));
    return 0;
}

int cmd_sweep(const Options& o, const std::string& parameter, const std::string& values) {
    ExperimentConfig c = resolve(o);
    const auto grid = split(values, ',');
    if (grid.empty() || std::any_of(grid.begin(), grid.end(), [](const auto& v) { return v.empty(); }))
        throw ConfigError("sweep: empty value in '" + values + "'");
    {
        ExperimentConfig probe = c;
        set_field(probe, parameter, grid.front());  // rejects unknown parameters before any training
    }
    const fs::path dir = prepare(c, "config_sweep.ini");
    const Benchmark bench = load_benchmark(c);
    const auto source = obtain_source(c, bench, "");
    const auto rows = run_sweep(c, bench, parameter, grid, log, &source);
    std::string name = resolve_key(parameter);
    std::replace(name.begin(), name.end(), '.', '_');
    const fs::path csv = dir / ("sweep_" + name + "_seed" + std::to_string(c.train.seed) + ".csv");
    write_sweep_csv(csv.string(), rows, c.arch.num_classes);
    std::cout << parameter << " | mIoU\n";
    for (const auto& r : rows) std::cout << r.value << " | " << fmt(100.0 * r.eval.iou.miou, 2) << "\n";
    log("wrote " + csv.string());
    return 0;
}

int cmd_ablate(const Options& o) {
    ExperimentConfig c = resolve(o);
    const fs::path dir = prepare(c, "config_ablate.ini");
    const Benchmark bench = load_benchmark(c);
    const std::vector<std::uint64_t> seeds = o.seed ? std::vector<std::uint64_t>{*o.seed} : c.seeds;
    std::map<std::string, std::vector<double>> miou, sil, sil_class;
    std::vector<AblationRow> median_rows;
    for (auto seed : seeds) {
        ExperimentConfig sc = c;
        sc.train.seed = seed;
        log("ablation seed " + std::to_string(seed));
        const auto t0 = std::chrono::steady_clock::now();
        auto rows = run_ablation(sc, bench, log);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log("seed " + std::to_string(seed) + " took " + fmt(secs, 1) + " s");
        write_ablation_csv((dir / ("ablation_seed" + std::to_string(seed) + ".csv")).string(), rows);
        std::cout << "seed " << seed << "\n" << ablation_table(rows) << "\n";
        for (const auto& r : rows) {
            miou[r.name].push_back(r.eval.iou.miou);
            if (r.eval.silhouette) sil[r.name].push_back(*r.eval.silhouette);
            if (r.eval.silhouette_class_mean) sil_class[r.name].push_back(*r.eval.silhouette_class_mean);
        }
        if (median_rows.empty()) median_rows = rows;
    }
    for (auto& r : median_rows) {
        r.eval.iou.miou = median(miou[r.name]);
        r.eval.silhouette = sil[r.name].empty() ? std::nullopt : std::optional(median(sil[r.name]));
        r.eval.silhouette_class_mean =
            sil_class[r.name].empty() ? std::nullopt : std::optional(median(sil_class[r.name]));
    }
    write_ablation_csv((dir / "ablation.csv").string(), median_rows);
    std::cout << "median over " << seeds.size() << " seed(s)\n" << ablation_table(median_rows);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Source-free domain adaptation by self-training with a learned metric"};
    app.require_subcommand(1);
    Options o;
    std::uint64_t seed = 0;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", o.config, "INI configuration file")->check(CLI::ExistingFile);
        sub->add_option("--profile", o.profile, "defaults profile: desk or paper");
        sub->add_option("--seed", seed, "training seed");
        sub->add_option("--flags", o.flags, "enabled components, e.g. ST,Aug,MT,MGS,MOCM");
        sub->add_flag("--mst", o.mst, "multi-scale testing at evaluation");
        sub->add_option("--set", o.sets, "override a config key (key=value), repeatable");
        sub->add_option("-o,--output", o.output_dir, "output directory");
    };

    std::string out, source_path, checkpoint, parameter, values;
    bool resume = false;
    long checkpoint_interval = 0;

    auto* gen = app.add_subcommand("gen-data", "write the synthetic benchmark as PNG files");
    add_common(gen);
    gen->add_option("--out", out, "dataset root (default <output>/data)");
    auto* train = app.add_subcommand("train-source", "supervised training on the source split");
    add_common(train);
    auto* adapt = app.add_subcommand("adapt", "adapt a source model to the target split");
    add_common(adapt);
    adapt->add_option("--source", source_path, "source checkpoint (default: <output>/source_seed<N>.ckpt, trained if absent)");
    adapt->add_flag("--resume", resume, "continue from the run's latest checkpoint");
    adapt->add_option("--checkpoint-every", checkpoint_interval, "iterations between checkpoints (default eval.interval)");
    auto* eval = app.add_subcommand("eval", "score a checkpoint on the evaluation split");
    add_common(eval);
    eval->add_option("--checkpoint", checkpoint, "network checkpoint (default: the adapt run's final.ckpt)");
    auto* sweep = app.add_subcommand("sweep", "one-parameter grid, e.g. `sweep alpha 1,2,4,8` or `sweep quantile ...`");
    add_common(sweep);
    sweep->add_option("parameter", parameter, "config key or alias")->required();
    sweep->add_option("values", values, "comma-separated values")->required();
    auto* ablate = app.add_subcommand("ablate", "run the six-row component ablation");
    add_common(ablate);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        for (auto* sub : {gen, train, adapt, eval, sweep, ablate})
            if (sub->parsed() && sub->count("--seed")) o.seed = seed;
        if (gen->parsed()) return cmd_gen_data(o, out);
        if (train->parsed()) return cmd_train_source(o);
        if (adapt->parsed()) return cmd_adapt(o, source_path, resume, checkpoint_interval);
        if (eval->parsed()) return cmd_eval(o, checkpoint);
        if (sweep->parsed()) return cmd_sweep(o, parameter, values);
        if (ablate->parsed()) return cmd_ablate(o);
    } catch (const Error& e) {
        std::cerr << "stvm: error: " << e.what() << std::endl;
        return e.exit_code();
    } catch (const fs::filesystem_error& e) {
        std::cerr << "stvm: error: " << e.what() << std::endl;
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "stvm: error: " << e.what() << std::endl;
        return 4;
    }
    return 0;
}
