#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "augment.hpp"
#include "checkpoint.hpp"
#include "data.hpp"
#include "error.hpp"
#include "metric.hpp"
#include "mocm.hpp"
#include "optim.hpp"
#include "rng.hpp"
#include "segnet.hpp"
#include "teacher.hpp"
#include "tensor.hpp"

namespace stvm {

/// Ablation switches: self-training, photometric augmentation, mean teacher,
/// metric-based gradient scaling, metric-based online ClassMix.
struct Flags {
    bool st = true;
    bool aug = false;
    bool mt = false;
    bool mgs = false;
    bool mocm = false;

    void validate() const {
        if (mgs && !mt) throw ConfigError("flags: MGS requires MT");
        if (mocm && !mgs) throw ConfigError("flags: MOCM requires MGS");
        if ((aug || mt || mgs || mocm) && !st) throw ConfigError("flags: every adaptation component requires ST");
    }

    static Flags parse(const std::string& text) {
        Flags f{false, false, false, false, false};
        std::stringstream ss(text);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            tok.erase(0, tok.find_first_not_of(" \t"));
            tok.erase(tok.find_last_not_of(" \t") + 1);
            if (tok.empty()) continue;
            if (tok == "ST") f.st = true;
            else if (tok == "Aug") f.aug = true;
            else if (tok == "MT") f.mt = true;
            else if (tok == "MGS") f.mgs = true;
            else if (tok == "MOCM") f.mocm = true;
            else throw ConfigError("flags: unknown component '" + tok + "'");
        }
        f.validate();
        return f;
    }

    std::string str() const {
        std::string s;
        auto add = [&](bool on, const char* name) {
            if (!on) return;
            if (!s.empty()) s += ',';
            s += name;
        };
        add(st, "ST"), add(aug, "Aug"), add(mt, "MT"), add(mgs, "MGS"), add(mocm, "MOCM");
        return s;
    }

    bool operator==(const Flags&) const = default;
};

struct TrainConfig {
    Flags flags{true, true, true, true, true};

    // metric learning
    double temperature = 0.25;
    double metric_quantile = 0.2;
    double threshold_momentum = 0.99;
    int cap_per_class = 256;
    double alpha = 2.0;
    double beta = 0.6;

    // online ClassMix
    int buffer_capacity = 50;
    double tau_mocm = 0.8;
    int n_mocm = 10;
    int min_patch_area = 64;

    // optimisation
    double lr_feature = 2.5e-4;
    double lr_classifier = 2.5e-3;
    double lr_metric = 3e-4;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double poly_power = 0.9;
    long teacher_period = 100;
    double teacher_smoothing = 1e-3;
    long iterations = 2000;
    int batch_size = 2;
    int crop_size = 512;
    std::uint64_t seed = 0;

    PhotoConfig photo;

    /// When set, plain self-training supervised only by the class-balanced
    /// top fraction of each frame's predictions (1.0 keeps everything).
    std::optional<double> st_quantile;

    // supervised source training
    long source_iterations = 500;
    double source_lr = 1e-3;
    int source_batch_size = 4;

    void validate() const {
        flags.validate();
        auto positive = [](double v, const char* what) {
            if (!(v > 0.0)) throw ConfigError(std::string("train: ") + what + " must be > 0");
        };
        positive(lr_feature, "lr_feature");
        positive(lr_classifier, "lr_classifier");
        positive(lr_metric, "lr_metric");
        positive(temperature, "temperature");
        positive(alpha, "alpha");
        positive(source_lr, "source_lr");
        if (!(metric_quantile > 0.0 && metric_quantile < 1.0)) throw ConfigError("train: metric_quantile must lie in (0, 1)");
        if (iterations < 0 || source_iterations < 0) throw ConfigError("train: iteration counts must be >= 0");
        if (batch_size < 1 || source_batch_size < 1) throw ConfigError("train: batch sizes must be >= 1");
        if (crop_size < ArchConfig::stride || crop_size % ArchConfig::stride != 0)
            throw ConfigError("train: crop_size must be a positive multiple of the network stride");
        if (cap_per_class < 1 || buffer_capacity < 1 || n_mocm < 0 || min_patch_area < 1)
            throw ConfigError("train: buffer/sampling sizes out of range");
        if (teacher_period < 1 || !(teacher_smoothing > 0.0 && teacher_smoothing <= 1.0))
            throw ConfigError("train: teacher period/smoothing out of range");
        if (st_quantile && !(*st_quantile > 0.0 && *st_quantile <= 1.0))
            throw ConfigError("train: st_quantile must lie in (0, 1]");
        if (st_quantile && (flags.aug || flags.mt || flags.mgs || flags.mocm))
            throw ConfigError("train: the quantile baseline runs plain self-training only");
        photo.validate();
    }
};

/// Loss value and its gradient w.r.t. the logits.
template <typename T>
struct LossResult {
    T loss = 0;
    Tensor3<T> grad_logits;
};

/// Reliability-weighted pixel-wise cross-entropy averaged over H·W. Labels
/// and weights are constants; ignore-label pixels contribute nothing.
template <typename T>
LossResult<T> weighted_ce_loss(const Tensor3<T>& logits, const LabelMap& labels, const Grid<T>& weights) {
    if (!labels.same_shape(logits.height, logits.width) || !weights.same_shape(logits.height, logits.width))
        throw ShapeError("weighted_ce_loss: logits/labels/weights are not aligned");
    require_finite(logits.data, "weighted_ce_loss logits");
    LossResult<T> out;
    out.grad_logits = Tensor3<T>(logits.height, logits.width, logits.channels);
    const T inv_hw = T(1) / static_cast<T>(logits.pixels());
    for (int i = 0; i < logits.pixels(); ++i) {
        const int y = labels[i];
        if (y == kIgnoreLabel) continue;
        if (y >= logits.channels) throw RangeError("weighted_ce_loss: label out of class range");
        const T w = weights[i];
        if (w == T(0)) continue;
        auto row = logits.data.row(i);
        const T m = row.maxCoeff();
        const RowVector<T> e = (row.array() - m).exp().matrix();
        const T sum = e.sum();
        const T log_p = row(y) - m - std::log(sum);
        out.loss -= w * log_p * inv_hw;
        auto g = out.grad_logits.data.row(i);
        g = e / sum;
        g(y) -= T(1);
        g *= w * inv_hw;
    }
    return out;
}

/// Plain (mean over non-ignored pixels) cross-entropy used for source training.
template <typename T>
LossResult<T> mean_ce_loss(const Tensor3<T>& logits, const LabelMap& labels) {
    Grid<T> ones(labels.height, labels.width, T(1));
    long valid = 0;
    for (auto v : labels.values) valid += v != kIgnoreLabel;
    auto r = weighted_ce_loss(logits, labels, ones);
    if (valid == 0) return r;
    const T scale = static_cast<T>(labels.pixels()) / static_cast<T>(valid);
    r.loss *= scale;
    r.grad_logits.data *= scale;
    return r;
}

/// Per-frame class-balanced selection used by the quantile baseline: keeps the
/// pixels whose confidence exceeds the (1 − q) lower quantile of their class.
template <typename T>
Grid<T> quantile_weights(const Grid<T>& conf, const LabelMap& labels, int num_classes, double q) {
    Grid<T> w(labels.height, labels.width, T(0));
    if (q >= 1.0) {
        std::fill(w.values.begin(), w.values.end(), T(1));
        return w;
    }
    ThresholdState<T> frame(num_classes, q, 0.0);
    update_thresholds(frame, conf, labels);
    const auto mask = select_metric_pseudo_labels(conf, labels, frame);
    for (int i = 0; i < mask.pixels(); ++i) w[i] = mask[i] != kIgnoreLabel ? T(1) : T(0);
    return w;
}

/// Full mutable state of one adaptation run.
struct RunState {
    NetworkParams<float> student;
    TeacherState<float> teacher;
    NetworkParams<float> metric;
    ProxyBank<float> proxies;
    ThresholdState<float> thresholds;
    PatchBuffer<float> buffers;
    SgdNesterov<float> sgd;
    Adam<float> adam;
    long iteration = 0;
    Rng augment_rng;
    Rng mocm_rng;
    Rng metric_rng;
};

/// Teacher and student both start from the source model.
inline RunState init_run_state(const NetworkParams<float>& source, const ArchConfig& arch, const TrainConfig& cfg) {
    cfg.validate();
    RunState s;
    s.student = source;
    s.teacher = {source, cfg.teacher_period, cfg.teacher_smoothing, 0};
    s.metric = init_metric_network<float>(arch, cfg.seed);
    s.proxies = init_proxies<float>(arch.num_classes, arch.metric_dim, cfg.seed);
    s.thresholds = ThresholdState<float>(arch.num_classes, cfg.metric_quantile, cfg.threshold_momentum);
    s.buffers = PatchBuffer<float>(arch.num_classes, cfg.buffer_capacity);
    s.sgd.momentum = cfg.momentum;
    s.sgd.weight_decay = cfg.weight_decay;
    s.augment_rng = make_stream(cfg.seed, "augment");
    s.mocm_rng = make_stream(cfg.seed, "mocm");
    s.metric_rng = make_stream(cfg.seed, "metric");
    return s;
}

/// Parameters whose predictions are evaluated: the teacher under MT, the
/// (single) self-trained network otherwise.
inline const NetworkParams<float>& eval_params(const RunState& s, const TrainConfig& cfg) {
    return cfg.flags.mt ? s.teacher.params : s.student;
}

struct StepStats {
    long iteration = 0;
    double student_loss = 0.0;
    double metric_loss = 0.0;
    bool metric_stepped = false;
    std::size_t metric_samples = 0;
    double mean_reliability = 1.0;
    int admitted = 0;
    int pasted = 0;
    bool teacher_updated = false;
};

/// Intermediate per-image quantities of one step, exposed for inspection.
struct StepTrace {
    std::vector<LabelMap> pseudo_labels;
    std::vector<Grid<float>> weights;
    std::vector<Image> student_inputs;
    std::vector<LabelMap> student_labels;
};

/// One adaptation iteration over `batch` (clean target crops):
///  1. teacher forward → pseudo-labels and confidences;
///  2. class-balanced metric pseudo-labels → one Adam step of the metric head
///     and proxies on the NCA loss;
///  3. reliability map (MGS) or unit weights;
///  4. patch extraction and admission (MOCM);
///  5. photometric noise (Aug) then online ClassMix (MOCM);
///  6. one SGD step of the student on the weighted cross-entropy;
///  7. EMA refresh of the teacher (MT).
inline StepStats adapt_step(RunState& s, const std::vector<Image>& batch, const ArchConfig& arch,
                            const TrainConfig& cfg, StepTrace* trace = nullptr) {
    if (batch.empty()) throw DataError("adapt_step: empty batch");
    const long it = ++s.iteration;
    if (it > cfg.iterations) throw RangeError("adapt_step: iteration budget exhausted");
    StepStats stats;
    stats.iteration = it;
    const int C = arch.num_classes;
    const auto& teacher_params = cfg.flags.mt ? s.teacher.params : s.student;
    const std::size_t B = batch.size();

    // (1) teacher data path on clean inputs
    std::vector<SegOutput<float>> teacher_out;
    std::vector<PseudoLabels<float>> pls;
    teacher_out.reserve(B);
    for (const auto& img : batch) {
        teacher_out.push_back(forward(teacher_params, arch, img));
        pls.push_back(pseudo_labels(teacher_out.back().logits));
    }

    // (2) metric learning on confident, class-balanced pixels
    std::vector<SampleSet> samples(B);
    std::vector<MetricOutput<float>> metric_out(B);
    std::size_t total = 0;
    for (std::size_t b = 0; b < B; ++b) {
        update_thresholds(s.thresholds, pls[b].confidence, pls[b].labels);
        const auto mask = select_metric_pseudo_labels(pls[b].confidence, pls[b].labels, s.thresholds);
        samples[b] = balanced_sample(mask, C, cfg.cap_per_class, s.metric_rng);
        total += samples[b].size();
    }
    stats.metric_samples = total;
    if (total > 0) {
        NetworkParams<float> metric_grads = s.metric.zeros_like();
        Matrix<float> proxy_grads = Matrix<float>::Zero(s.proxies.proxies.rows(), s.proxies.proxies.cols());
        for (std::size_t b = 0; b < B; ++b) {
            if (samples[b].empty()) continue;
            metric_out[b] = forward_metric(s.metric, arch, teacher_out[b].features, true);
            const auto r = nca_loss(metric_out[b].full, samples[b], s.proxies, cfg.temperature);
            const float share = static_cast<float>(samples[b].size()) / static_cast<float>(total);
            stats.metric_loss += static_cast<double>(r.loss) * share;
            Tensor3<float> grad_full(metric_out[b].full.height, metric_out[b].full.width, arch.metric_dim);
            for (std::size_t k = 0; k < samples[b].size(); ++k)
                grad_full.pixel(samples[b][k].y, samples[b][k].x) += share * r.feature_grads[k];
            metric_grads += backward_metric(s.metric, arch, metric_out[b], grad_full);
            proxy_grads += share * r.proxy_grads;
        }
        std::vector<Matrix<float>*> params;
        std::vector<const Matrix<float>*> grads;
        for (std::size_t i = 0; i < s.metric.size(); ++i) {
            params.push_back(&s.metric[i].value);
            grads.push_back(&metric_grads[i].value);
        }
        params.push_back(&s.proxies.proxies);
        grads.push_back(&proxy_grads);
        s.adam.step(params, grads, poly_lr(cfg.lr_metric, it - 1, cfg.iterations, cfg.poly_power));
        stats.metric_stepped = true;
    }

    // (3)–(5) per-image supervision targets and student inputs
    NetworkParams<float> student_grads = s.student.zeros_like();
    double rel_sum = 0.0;
    long rel_count = 0;
    for (std::size_t b = 0; b < B; ++b) {
        const int H = batch[b].height, W = batch[b].width;
        Grid<float> weights(H, W, 1.0f);
        Grid<float> rel;
        Grid<float> dist;
        if (cfg.flags.mgs || cfg.flags.mocm) {
            const auto m = forward_metric(s.metric, arch, teacher_out[b].features);
            dist = proxy_distance_map(m.full, pls[b].labels, s.proxies);
            rel = Grid<float>(H, W);
            for (int i = 0; i < rel.pixels(); ++i)
                rel[i] = static_cast<float>(reliability_from_distance(dist[i], cfg.alpha, cfg.beta));
            if (cfg.flags.mgs) weights = rel;
        }
        if (cfg.st_quantile) weights = quantile_weights(pls[b].confidence, pls[b].labels, C, *cfg.st_quantile);
        if (cfg.flags.mocm) {
            for (auto& patch : extract_candidate_patches(batch[b], pls[b].labels, rel, dist, cfg.min_patch_area))
                stats.admitted += admit(s.buffers, std::move(patch), cfg.tau_mocm);
        }
        for (float w : weights.values) rel_sum += w;
        rel_count += weights.pixels();

        Image input = batch[b];
        LabelMap labels = pls[b].labels;
        if (cfg.flags.aug) input = photometric(std::move(input), cfg.photo, s.augment_rng);
        if (cfg.flags.mocm) {
            auto mixed = sample_mix(std::move(input), std::move(labels), std::move(weights), s.buffers, cfg.n_mocm,
                                    s.mocm_rng);
            input = std::move(mixed.image);
            labels = std::move(mixed.labels);
            weights = std::move(mixed.reliability);
            stats.pasted += static_cast<int>(mixed.classes.size());
        }

        // (6) noisy student
        const auto fwd = forward(s.student, arch, input, true);
        const auto loss = weighted_ce_loss(fwd.logits, labels, weights);
        stats.student_loss += static_cast<double>(loss.loss) / static_cast<double>(B);
        Tensor3<float> g = loss.grad_logits;
        g.data /= static_cast<float>(B);
        student_grads += backward(s.student, arch, fwd, g);

        if (trace) {
            trace->pseudo_labels.push_back(pls[b].labels);
            trace->weights.push_back(weights);
            trace->student_inputs.push_back(input);
            trace->student_labels.push_back(labels);
        }
    }
    stats.mean_reliability = rel_count ? rel_sum / static_cast<double>(rel_count) : 1.0;
    const double lr_fe = poly_lr(cfg.lr_feature, it - 1, cfg.iterations, cfg.poly_power);
    const double lr_cls = poly_lr(cfg.lr_classifier, it - 1, cfg.iterations, cfg.poly_power);
    s.sgd.step(s.student, student_grads, [&](ParamGroup g) { return g == ParamGroup::classifier ? lr_cls : lr_fe; });

    // (7) mean teacher
    if (cfg.flags.mt) stats.teacher_updated = ema_update(s.teacher, s.student, it);
    return stats;
}

/// Deterministic epoch-shuffled sampling order: the k-th drawn example is
/// permutation_{k / n}[k mod n], each permutation seeded from its epoch.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::uint64_t seed, std::string stream) : n_(n), seed_(seed), stream_(std::move(stream)) {
        if (n == 0) throw DataError("batch sampler over an empty dataset");
    }

    std::size_t index(std::uint64_t k) {
        const std::uint64_t epoch = k / n_;
        if (epoch != epoch_ || perm_.empty()) {
            perm_.resize(n_);
            for (std::size_t i = 0; i < n_; ++i) perm_[i] = i;
            Rng rng = make_stream(seed_, stream_ + "." + std::to_string(epoch));
            std::shuffle(perm_.begin(), perm_.end(), rng);
            epoch_ = epoch;
        }
        return perm_[k % n_];
    }

private:
    std::size_t n_;
    std::uint64_t seed_;
    std::string stream_;
    std::uint64_t epoch_ = 0;
    std::vector<std::size_t> perm_;
};

/// Random crop (offset drawn from `rng`); the full image when it already fits.
inline Image random_crop(const Image& img, int crop, Rng& rng) {
    if (img.height <= crop && img.width <= crop) return img;
    const int ch = std::min(crop, img.height), cw = std::min(crop, img.width);
    const int oy = uniform_int(rng, 0, img.height - ch), ox = uniform_int(rng, 0, img.width - cw);
    Image out(ch, cw, 3);
    for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x) out.data.row(y * cw + x) = img.data.row((oy + y) * img.width + ox + x);
    return out;
}

/// Adaptation batch for iteration `it` (1-based), reproducible from the seed
/// alone so interrupted runs resume on the same data.
inline std::vector<Image> adaptation_batch(const Dataset& target, const TrainConfig& cfg, long it) {
    BatchSampler sampler(target.size(), cfg.seed, "data.adapt");
    Rng crop_rng = make_stream(cfg.seed, "data.crop." + std::to_string(it));
    std::vector<Image> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
        const auto k = static_cast<std::uint64_t>(it - 1) * cfg.batch_size + b;
        batch.push_back(random_crop(target[sampler.index(k)].image, cfg.crop_size, crop_rng));
    }
    return batch;
}

/// Supervised source training with Adam on the mean cross-entropy.
inline NetworkParams<float> train_source(const Dataset& source, const ArchConfig& arch, const TrainConfig& cfg) {
    if (source.size() == 0) throw DataError("train_source: empty dataset");
    for (const auto& item : source.items)
        if (!item.labels) throw DataError("train_source: every source image needs labels");
    NetworkParams<float> net = init_network<float>(arch, cfg.seed);
    if (cfg.source_iterations == 0) return net;
    Adam<float> adam;
    BatchSampler sampler(source.size(), cfg.seed, "data.source");
    std::uint64_t k = 0;
    for (long it = 0; it < cfg.source_iterations; ++it) {
        NetworkParams<float> grads = net.zeros_like();
        for (int b = 0; b < cfg.source_batch_size; ++b) {
            const auto& item = source[sampler.index(k++)];
            const auto fwd = forward(net, arch, item.image, true);
            auto loss = mean_ce_loss(fwd.logits, *item.labels);
            loss.grad_logits.data /= static_cast<float>(cfg.source_batch_size);
            grads += backward(net, arch, fwd, loss.grad_logits);
        }
        std::vector<Matrix<float>*> params;
        std::vector<const Matrix<float>*> gp;
        for (std::size_t i = 0; i < net.size(); ++i) {
            params.push_back(&net[i].value);
            gp.push_back(&grads[i].value);
        }
        adam.step(params, gp, poly_lr(cfg.source_lr, it, cfg.source_iterations, cfg.poly_power));
    }
    return net;
}

/// Serialises every piece of RunState needed to resume bit-exactly.
inline Archive run_state_archive(const RunState& s, const ArchConfig& arch) {
    Archive ar;
    put_arch(ar, arch);
    ar.meta["iteration"] = std::to_string(s.iteration);
    ar.meta["teacher.last_update_iter"] = std::to_string(s.teacher.last_update_iter);
    ar.meta["adam.steps"] = std::to_string(s.adam.steps);
    ar.meta["rng.augment"] = rng_state(s.augment_rng);
    ar.meta["rng.mocm"] = rng_state(s.mocm_rng);
    ar.meta["rng.metric"] = rng_state(s.metric_rng);
    put_params(ar, "student.", s.student);
    put_params(ar, "teacher.", s.teacher.params);
    put_params(ar, "metric.", s.metric);
    ar.put_matrix("proxies", s.proxies.proxies);
    {
        std::vector<float> tau;
        for (const auto& t : s.thresholds.tau) tau.push_back(t ? *t : std::numeric_limits<float>::quiet_NaN());
        ar.put("thresholds", {static_cast<std::uint32_t>(tau.size())}, tau);
    }
    if (s.sgd.velocity.size()) put_params(ar, "sgd.velocity.", s.sgd.velocity);
    for (std::size_t i = 0; i < s.adam.m.size(); ++i) {
        ar.put_matrix("adam.m." + std::to_string(i), s.adam.m[i]);
        ar.put_matrix("adam.v." + std::to_string(i), s.adam.v[i]);
    }
    for (std::size_t c = 0; c < s.buffers.queues.size(); ++c) {
        const auto& q = s.buffers.queues[c];
        ar.meta["buffer." + std::to_string(c) + ".size"] = std::to_string(q.size());
        for (std::size_t k = 0; k < q.size(); ++k) {
            const auto& r = q[k];
            const std::string p = "buffer." + std::to_string(c) + "." + std::to_string(k);
            char dist[64];
            std::snprintf(dist, sizeof(dist), "%a", r.mean_distance);
            ar.meta[p] = std::to_string(r.origin_y) + " " + std::to_string(r.origin_x) + " " + dist;
            const auto h = static_cast<std::uint32_t>(r.height()), w = static_cast<std::uint32_t>(r.width());
            ar.put(p + ".image", {h, w, 3}, std::vector<float>(r.image.data.data(), r.image.data.data() + r.image.data.size()));
            ar.put(p + ".labels", {h, w}, std::vector<float>(r.labels.values.begin(), r.labels.values.end()));
            ar.put(p + ".reliability", {h, w}, r.reliability.values);
            ar.put(p + ".mask", {h, w}, std::vector<float>(r.mask.values.begin(), r.mask.values.end()));
        }
    }
    return ar;
}

/// Inverse of `run_state_archive`; `cfg` supplies the non-serialised
/// hyper-parameters (optimizer constants, buffer capacity, ...).
inline RunState restore_run_state(const Archive& ar, const ArchConfig& arch, const TrainConfig& cfg) {
    if (!(get_arch(ar) == arch)) throw ConfigError("checkpoint architecture does not match the configuration");
    RunState s = init_run_state(init_network<float>(arch, 0), arch, cfg);
    s.iteration = std::stol(ar.meta_at("iteration"));
    s.teacher.last_update_iter = std::stol(ar.meta_at("teacher.last_update_iter"));
    s.adam.steps = std::stol(ar.meta_at("adam.steps"));
    restore_rng_state(s.augment_rng, ar.meta_at("rng.augment"));
    restore_rng_state(s.mocm_rng, ar.meta_at("rng.mocm"));
    restore_rng_state(s.metric_rng, ar.meta_at("rng.metric"));
    get_params(ar, "student.", s.student);
    get_params(ar, "teacher.", s.teacher.params);
    get_params(ar, "metric.", s.metric);
    s.proxies.proxies = ar.get_matrix<float>("proxies");
    const auto& tau = ar.get("thresholds").data;
    if (tau.size() != s.thresholds.tau.size()) throw ShapeError("checkpoint: threshold count mismatch");
    for (std::size_t c = 0; c < tau.size(); ++c)
        s.thresholds.tau[c] = std::isnan(tau[c]) ? std::nullopt : std::optional<float>(tau[c]);
    if (ar.has("sgd.velocity." + s.student[0].name)) {
        s.sgd.velocity = s.student.zeros_like();
        get_params(ar, "sgd.velocity.", s.sgd.velocity);
    }
    for (std::size_t i = 0; ar.has("adam.m." + std::to_string(i)); ++i) {
        s.adam.m.push_back(ar.get_matrix<float>("adam.m." + std::to_string(i)));
        s.adam.v.push_back(ar.get_matrix<float>("adam.v." + std::to_string(i)));
    }
    for (std::size_t c = 0; c < s.buffers.queues.size(); ++c) {
        const auto n = std::stoul(ar.meta_at("buffer." + std::to_string(c) + ".size"));
        for (std::size_t k = 0; k < n; ++k) {
            const std::string p = "buffer." + std::to_string(c) + "." + std::to_string(k);
            PatchRecord<float> r;
            r.cls = static_cast<int>(c);
            std::istringstream meta(ar.meta_at(p));
            std::string dist;
            meta >> r.origin_y >> r.origin_x >> dist;
            r.mean_distance = std::strtod(dist.c_str(), nullptr);
            const auto& img = ar.get(p + ".image");
            const int h = static_cast<int>(img.shape.at(0)), w = static_cast<int>(img.shape.at(1));
            r.image = Image(h, w, 3);
            std::copy(img.data.begin(), img.data.end(), r.image.data.data());
            r.labels = LabelMap(h, w);
            r.reliability = Grid<float>(h, w);
            r.mask = Grid<std::uint8_t>(h, w);
            const auto& l = ar.get(p + ".labels").data;
            const auto& m = ar.get(p + ".mask").data;
            for (int i = 0; i < h * w; ++i) {
                r.labels[i] = static_cast<std::uint8_t>(l[i]);
                r.mask[i] = static_cast<std::uint8_t>(m[i]);
            }
            r.reliability.values = ar.get(p + ".reliability").data;
            s.buffers.queues[c].push_back(std::move(r));
        }
    }
    return s;
}

} // namespace stvm
