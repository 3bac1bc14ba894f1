#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <map>
#include <numeric>
#include <set>

#include "support.hpp"

using namespace stvm;
using namespace stvm::testing;

namespace {

/// Unit vectors whose normalised squared-L2 distances equal `k·D` for the
/// given Euclidean distance matrix D; silhouette is invariant to the scale k.
Matrix<double> sphere_embedding(const Matrix<double>& D, double k) {
    const Matrix<double> G = Matrix<double>::Ones(D.rows(), D.cols()) - 0.5 * k * D;
    Eigen::SelfAdjointEigenSolver<Matrix<double>> es(G);
    EXPECT_GT(es.eigenvalues().minCoeff(), -1e-12);
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

/// Textbook silhouette written directly from its definition.
double brute_silhouette(const std::vector<std::vector<double>>& dist, const std::vector<int>& labels) {
    const std::size_t n = labels.size();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::map<int, std::pair<double, int>> by;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            by[labels[j]].first += dist[i][j];
            by[labels[j]].second += 1;
        }
        if (!by.count(labels[i])) continue;  // singleton
        const double a = by[labels[i]].first / by[labels[i]].second;
        double b = 1e300;
        for (const auto& [c, v] : by)
            if (c != labels[i]) b = std::min(b, v.first / v.second);
        total += (b - a) / std::max(a, b);
    }
    return 100.0 * total / static_cast<double>(n);
}

Matrix<double> clustered_points(int n, int k, int dim, double spread, Rng& rng, std::vector<int>& labels) {
    Matrix<double> centres(k, dim);
    for (Eigen::Index i = 0; i < centres.size(); ++i) centres.data()[i] = uniform<double>(rng, -1, 1);
    std::normal_distribution<double> noise(0.0, spread);
    Matrix<double> p(n, dim);
    labels.assign(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        labels[i] = i % k;
        for (int d = 0; d < dim; ++d) p(i, d) = centres(labels[i], d) + noise(rng);
    }
    return p;
}

} // namespace

TEST(IoU, HandConfusionFixture) {
    LabelMap gt(1, 4), pred(1, 4);
    gt.values = {0, 0, 1, 1};
    pred.values = {0, 1, 1, 1};
    const auto r = iou_report({pred}, {gt}, 4);
    EXPECT_DOUBLE_EQ(*r.iou[0], 0.5);
    EXPECT_DOUBLE_EQ(*r.iou[1], 2.0 / 3.0);
    EXPECT_FALSE(r.iou[2].has_value());
    EXPECT_FALSE(r.iou[3].has_value());
    EXPECT_NEAR(r.miou, 0.58333, 1e-5);
    EXPECT_EQ(r.pixels, 4);
}

TEST(IoU, PerfectPredictionAndIgnoredPixels) {
    Rng rng(1);
    auto gt = random_labels(8, 8, 3, rng);
    const auto r = iou_report({gt}, {gt}, 3);
    for (const auto& v : r.iou) EXPECT_EQ(*v, 1.0);
    EXPECT_EQ(r.miou, 1.0);
    auto pred = gt;
    gt(0, 0) = kIgnoreLabel;
    pred(0, 0) = static_cast<std::uint8_t>((pred(0, 0) + 1) % 3);
    const auto r2 = iou_report({pred}, {gt}, 3);
    EXPECT_EQ(r2.miou, 1.0);
    EXPECT_EQ(r2.pixels, 63);
}

TEST(IoU, MatchesSetIntersectionOracleOnRandomMaps) {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const int C = 2 + trial % 5;
        std::vector<LabelMap> preds, gts;
        for (int k = 0; k < 3; ++k) {
            preds.push_back(random_labels(16, 16, C, rng));
            gts.push_back(random_labels(16, 16, C, rng));
            for (int i = 0; i < 10; ++i) gts.back()[uniform_int(rng, 0, 255)] = kIgnoreLabel;
        }
        const auto r = iou_report(preds, gts, C);
        long total = 0;
        for (const auto& row : r.confusion)
            for (long v : row) total += v;
        EXPECT_EQ(total, r.pixels);
        double sum = 0;
        int present = 0;
        for (int c = 0; c < C; ++c) {
            std::set<std::pair<int, int>> P, G;
            for (int k = 0; k < 3; ++k)
                for (int i = 0; i < 256; ++i) {
                    if (gts[k][i] == kIgnoreLabel) continue;
                    if (preds[k][i] == c) P.insert({k, i});
                    if (gts[k][i] == c) G.insert({k, i});
                }
            std::size_t inter = 0;
            for (const auto& x : P) inter += G.count(x);
            const std::size_t uni = P.size() + G.size() - inter;
            if (uni == 0) {
                EXPECT_FALSE(r.iou[c].has_value());
                continue;
            }
            const double expect = static_cast<double>(inter) / static_cast<double>(uni);
            EXPECT_EQ(*r.iou[c], expect);
            sum += expect, ++present;
        }
        EXPECT_EQ(r.miou, sum / present);
    }
}

TEST(IoU, Errors) {
    EXPECT_THROW(iou_report({LabelMap(2, 2, 0)}, {LabelMap(2, 3, 0)}, 2), ShapeError);
    EXPECT_THROW(iou_report({LabelMap(2, 2, 0)}, {}, 2), ShapeError);
    EXPECT_THROW(iou_report({LabelMap(2, 2, 5)}, {LabelMap(2, 2, 0)}, 2), DataError);
}

TEST(Silhouette, FourPointFixtureThroughSphereEmbedding) {
    const double pts[4][2] = {{0, 0}, {0, 1}, {10, 0}, {10, 1}};
    Matrix<double> D(4, 4);
    std::vector<std::vector<double>> dist(4, std::vector<double>(4));
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) D(i, j) = dist[i][j] = std::hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]);
    const std::vector<int> labels{0, 0, 1, 1};
    const double euclid = brute_silhouette(dist, labels);
    EXPECT_NEAR(euclid, 100.0 * (1.0 - 2.0 / (10.0 + std::sqrt(101.0))), 1e-12);
    EXPECT_NEAR(euclid, 90.02, 5e-3);
    const auto s = silhouette(sphere_embedding(D, 0.02), labels, 2);
    EXPECT_NEAR(s.overall, euclid, 1e-9);
    EXPECT_NEAR(*s.class_means[0], euclid, 1e-9);
}

TEST(Silhouette, MatchesPairwiseBruteForce) {
    Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<int> labels;
        const int n = 100 + 100 * trial;
        const auto p = clustered_points(n, 4, 6, 0.4, rng, labels);
        labels[0] = 3;  // uneven cluster sizes
        std::vector<std::vector<double>> dist(n, std::vector<double>(n));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const double c = p.row(i).dot(p.row(j)) / (p.row(i).norm() * p.row(j).norm());
                dist[i][j] = 2.0 - 2.0 * c;
            }
        std::vector<double> per_point;
        const auto s = silhouette(p, labels, 5, &per_point);
        EXPECT_NEAR(s.overall, brute_silhouette(dist, labels), 1e-6);
        EXPECT_FALSE(s.class_means[4].has_value());
        for (double v : per_point) {
            EXPECT_GE(v, -1.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(Silhouette, SeparatedClustersScoreNearHundredAndSingletonsScoreZero) {
    Matrix<double> p(5, 2);
    p << 1, 0, 1, 1e-6, 0, 1, 1e-6, 1, -1, -1;
    std::vector<double> per_point;
    const auto s = silhouette(p, {0, 0, 1, 1, 2}, 3, &per_point);
    EXPECT_GT(per_point[0], 0.999);
    EXPECT_EQ(per_point[4], 0.0);
    EXPECT_NEAR(*s.class_means[2], 0.0, 0.0);
}

TEST(Silhouette, InvariantUnderRelabelling) {
    Rng rng(4);
    std::vector<int> labels;
    const auto p = clustered_points(120, 3, 4, 0.3, rng, labels);
    const auto base = silhouette(p, labels, 3);
    std::vector<int> renamed(labels.size());
    const int perm[3] = {2, 0, 1};
    for (std::size_t i = 0; i < labels.size(); ++i) renamed[i] = perm[labels[i]];
    const auto other = silhouette(p, renamed, 3);
    EXPECT_NEAR(base.overall, other.overall, 1e-9);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(*base.class_means[c], *other.class_means[perm[c]], 1e-9);
    EXPECT_GE(base.overall, -100.0);
    EXPECT_LE(base.overall, 100.0);
}

TEST(Silhouette, RandomLabelsScoreAboutZero) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        std::vector<int> labels;
        const auto p = clustered_points(300, 3, 5, 0.3, rng, labels);
        std::shuffle(labels.begin(), labels.end(), rng);
        EXPECT_LE(silhouette(p, labels, 3).overall, 5.0) << "seed " << seed;
    }
}

TEST(Silhouette, SubsampleTracksTheFullScore) {
    Rng rng(5);
    std::vector<int> labels;
    const auto p = clustered_points(4000, 4, 6, 0.5, rng, labels);
    const double full = silhouette(p, labels, 4).overall;
    std::vector<int> idx(4000);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(2000);
    Matrix<double> sub(2000, p.cols());
    std::vector<int> sub_labels(2000);
    for (int i = 0; i < 2000; ++i) sub.row(i) = p.row(idx[i]), sub_labels[i] = labels[idx[i]];
    EXPECT_NEAR(silhouette(sub, sub_labels, 4).overall, full, 3.0);
}

TEST(Silhouette, Errors) {
    Matrix<double> p = Matrix<double>::Ones(3, 2);
    EXPECT_THROW(silhouette(p, {0, 0, 0}, 2), RangeError);
    EXPECT_THROW(silhouette(p, {0, 1}, 2), ShapeError);
    EXPECT_THROW(silhouette(p, {0, 1, 2}, 2), RangeError);
    p.row(0).setZero();
    EXPECT_THROW(silhouette(p, {0, 1, 1}, 2), NumericError);
}

TEST(MultiScale, UnitScaleMatchesSingleForward) {
    const ArchConfig arch{4, 8, 4, 4};
    const auto net = init_network<double>(arch, 3);
    Rng rng(6);
    const auto img = random_tensor<double>(16, 12, 3, rng, 0, 1);
    const auto single = forward(net, arch, img).logits;
    const auto mst = multi_scale_predict(net, arch, img, {1.0});
    Tensor3<double> p(16, 12, 4);
    p.data = softmax_rows(single.data);
    EXPECT_LT((mst.data.array().exp().matrix() - p.data).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(argmax_labels(mst.cast<float>()), argmax_labels(single.cast<float>()));
}

TEST(MultiScale, ConstantNetworkIsScaleIndependent) {
    const ArchConfig arch{3, 8, 4, 4};
    auto net = init_network<double>(arch, 1);
    for (auto& q : net.params) q.value.setZero();
    net.params.back().value << 0.3, -1.0, 2.0;  // classifier.fc2 bias
    Rng rng(7);
    const auto img = random_tensor<double>(16, 16, 3, rng, 0, 1);
    const auto mst = multi_scale_predict(net, arch, img, {0.75, 1.0, 1.25});
    Tensor3<double> single(16, 16, 3);
    single.data = softmax_rows(forward(net, arch, img).logits.data);
    EXPECT_LT((mst.data.array().exp().matrix() - single.data).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(MultiScale, EqualsHandComposedAverage) {
    const ArchConfig arch{4, 8, 4, 4};
    const auto net = init_network<double>(arch, 5);
    Rng rng(8);
    const auto img = random_tensor<double>(16, 16, 3, rng, 0, 1);
    Matrix<double> avg = Matrix<double>::Zero(256, 4);
    for (int side : {12, 16, 20}) {
        const auto out = forward(net, arch, resize_bilinear(img, side, side)).logits;
        Tensor3<double> prob(side, side, 4);
        prob.data = softmax_rows(out.data);
        avg += resize_bilinear(prob, 16, 16).data / 3.0;
    }
    const auto mst = multi_scale_predict(net, arch, img, {0.75, 1.0, 1.25});
    EXPECT_LT((mst.data.array().exp().matrix() - avg).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(MultiScale, Errors) {
    const ArchConfig arch{3, 8, 4, 4};
    const auto net = init_network<double>(arch, 1);
    const Tensor3<double> img(8, 8, 3);
    EXPECT_THROW(multi_scale_predict(net, arch, img, {}), RangeError);
    EXPECT_THROW(multi_scale_predict(net, arch, img, {0.0}), RangeError);
    EXPECT_THROW(multi_scale_predict(net, arch, img, {0.1}), RangeError);
}

TEST(Evaluate, ReportsMiouAndSilhouetteOnTinyBenchmark) {
    auto cfg = tiny_config();
    const auto bench = load_benchmark(cfg);
    const auto net = train_source(bench.source, cfg.arch, cfg.train);
    const auto metric = init_metric_network<float>(cfg.arch, 0);
    const auto r = evaluate(net, cfg.arch, bench.eval, cfg.eval, &metric, 1);
    EXPECT_GE(r.iou.miou, 0.0);
    EXPECT_LE(r.iou.miou, 1.0);
    ASSERT_TRUE(r.silhouette.has_value());
    EXPECT_GE(*r.silhouette, -100.0);
    EXPECT_LE(*r.silhouette, 100.0);
    const auto again = evaluate(net, cfg.arch, bench.eval, cfg.eval, &metric, 1);
    EXPECT_EQ(*again.silhouette, *r.silhouette);
    EXPECT_FALSE(evaluate(net, cfg.arch, bench.eval, cfg.eval).silhouette.has_value());
}
