#include <gtest/gtest.h>

#include "support.hpp"

using namespace stvm;
using namespace stvm::testing;

namespace {

const ArchConfig kSmall{4, 8, 6, 4};

/// Direct 6-loop convolution with zero padding k/2.
Tensor3<double> naive_conv(const Tensor3<double>& in, const Matrix<double>& w, const Matrix<double>& b, int k,
                           int stride, bool relu) {
    const int oh = in.height / stride, ow = in.width / stride, oc = static_cast<int>(w.cols());
    Tensor3<double> out(oh, ow, oc);
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
            for (int o = 0; o < oc; ++o) {
                double acc = b(0, o);
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx)
                        for (int c = 0; c < in.channels; ++c) {
                            const int iy = oy * stride + ky - k / 2, ix = ox * stride + kx - k / 2;
                            if (iy < 0 || ix < 0 || iy >= in.height || ix >= in.width) continue;
                            acc += in.at(iy, ix, c) * w((ky * k + kx) * in.channels + c, o);
                        }
                out.at(oy, ox, o) = relu ? std::max(acc, 0.0) : acc;
            }
    return out;
}

double weighted_ce_of(const NetworkParams<double>& net, const ArchConfig& arch, const Tensor3<double>& img,
                      const LabelMap& labels, const Grid<double>& w) {
    return weighted_ce_loss(forward(net, arch, img).logits, labels, w).loss;
}

} // namespace

TEST(Segnet, LayerTableHasStrideFourAndNamedGroups) {
    const auto layers = segmentation_layers(kSmall);
    ASSERT_EQ(layers.size(), 6u);
    int stride = 1;
    for (const auto& l : layers) stride *= l.stride;
    EXPECT_EQ(stride, ArchConfig::stride);
    EXPECT_EQ(layers.back().out_channels, kSmall.num_classes);
    EXPECT_EQ(layers[3].out_channels, kSmall.feature_dim);
    EXPECT_EQ(layers[4].group, ParamGroup::classifier);
    EXPECT_EQ(layers[0].group, ParamGroup::feature_extractor);
    const auto metric = metric_layers(kSmall);
    ASSERT_EQ(metric.size(), 2u);
    EXPECT_EQ(metric[0].in_channels, kSmall.feature_dim);
    EXPECT_EQ(metric[1].out_channels, kSmall.metric_dim);
    EXPECT_EQ(metric[1].group, ParamGroup::metric_head);
}

TEST(Segnet, InitIsSeededWithZeroBiasesAndFanInScale) {
    const ArchConfig arch{6, 64, 32, 16};
    const auto a = init_network<float>(arch, 11), b = init_network<float>(arch, 11), c = init_network<float>(arch, 12);
    EXPECT_TRUE(a == b);
    EXPECT_FALSE(a == c);
    for (std::size_t i = 0; i < a.size(); i += 2) {
        EXPECT_TRUE(a[i + 1].value.isZero());
        const double fan_in = static_cast<double>(a[i].value.rows());
        const double var = a[i].value.template cast<double>().squaredNorm() / static_cast<double>(a[i].value.size());
        EXPECT_NEAR(var * fan_in / 2.0, 1.0, 0.25) << a[i].name;
    }
}

TEST(Segnet, ArchValidationRejectsDegenerateShapes) {
    EXPECT_THROW((ArchConfig{1, 64, 128, 16}.validate()), ConfigError);
    EXPECT_THROW((ArchConfig{6, 4, 128, 16}.validate()), ConfigError);
    EXPECT_THROW((ArchConfig{6, 64, 1, 16}.validate()), ConfigError);
    EXPECT_NO_THROW((ArchConfig{6, 64, 128, 16}.validate()));
}

TEST(Segnet, ConvolutionMatchesNaiveOracle) {
    Rng rng(3);
    for (int k : {1, 3})
        for (int stride : {1, 2}) {
            if (k == 1 && stride == 2) continue;
            const ConvSpec spec{"c", ParamGroup::feature_extractor, 3, 5, k, stride, true};
            const auto in = random_tensor<double>(8, 6, 3, rng);
            Matrix<double> w = random_tensor<double>(k * k * 3, 5, 1, rng).data.reshaped<Eigen::RowMajor>(k * k * 3, 5);
            Matrix<double> b = random_tensor<double>(1, 5, 1, rng).data.reshaped<Eigen::RowMajor>(1, 5);
            const auto got = detail::conv_forward(spec, w, b, in, static_cast<ConvCache<double>*>(nullptr));
            const auto want = naive_conv(in, w, b, k, stride, true);
            ASSERT_TRUE(got.same_shape(want));
            EXPECT_LT((got.data - want.data).cwiseAbs().maxCoeff(), 1e-12);
        }
}

TEST(Segnet, Im2colAndCol2imAreAdjoint) {
    Rng rng(4);
    const auto x = random_tensor<double>(8, 8, 3, rng);
    const Matrix<double> cols = detail::im2col(x, 3, 2, 4, 4);
    const Matrix<double> y = random_tensor<double>(16, 27, 1, rng).data.reshaped<Eigen::RowMajor>(16, 27);
    const double lhs = (cols.array() * y.array()).sum();
    const double rhs = (x.data.array() * detail::col2im(y, 8, 8, 3, 3, 2, 4, 4).data.array()).sum();
    EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(Segnet, ForwardShapes) {
    const auto net = init_network<float>(kSmall, 0);
    Rng rng(5);
    const auto img = random_tensor<float>(12, 20, 3, rng, 0.0, 1.0);
    const auto out = forward(net, kSmall, img);
    EXPECT_EQ(out.features.height, 3);
    EXPECT_EQ(out.features.width, 5);
    EXPECT_EQ(out.features.channels, kSmall.feature_dim);
    EXPECT_EQ(out.low_logits.channels, kSmall.num_classes);
    EXPECT_EQ(out.logits.height, 12);
    EXPECT_EQ(out.logits.width, 20);
    const auto m = forward_metric(init_metric_network<float>(kSmall, 0), kSmall, out.features);
    EXPECT_EQ(m.full.height, 12);
    EXPECT_EQ(m.full.channels, kSmall.metric_dim);
}

TEST(Segnet, ForwardRejectsBadInputs) {
    const auto net = init_network<float>(kSmall, 0);
    EXPECT_THROW(forward(net, kSmall, Image(10, 12, 3)), ShapeError);
    EXPECT_THROW(forward(net, kSmall, Image(8, 8, 1)), ShapeError);
    const auto out = forward(net, kSmall, Image(8, 8, 3));
    EXPECT_THROW(backward(net, kSmall, out, out.logits), Error);
}

TEST(Segnet, StudentGradientMatchesFiniteDifferences) {
    Rng rng(6);
    double worst = 0.0;
    int checked = 0;
    for (int trial = 0; trial < 4; ++trial) {
        const auto net = init_network<double>(kSmall, 100 + trial);
        const auto img = random_tensor<double>(8, 12, 3, rng, 0.0, 1.0);
        const auto labels = random_labels(8, 12, kSmall.num_classes, rng);
        const auto w = random_grid<double>(8, 12, rng);
        const auto fwd = forward(net, kSmall, img, true);
        const auto grads = backward(net, kSmall, fwd, weighted_ce_loss(fwd.logits, labels, w).grad_logits);
        for (std::size_t i = 0; i < net.size(); ++i)
            for (int probe = 0; probe < 3; ++probe) {
                const auto r = uniform_int(rng, 0, static_cast<int>(net[i].value.rows()) - 1);
                const auto c = uniform_int(rng, 0, static_cast<int>(net[i].value.cols()) - 1);
                auto plus = net, minus = net;
                plus[i].value(r, c) += 1e-5;
                minus[i].value(r, c) -= 1e-5;
                if (!same_relu_pattern(plus, minus, kSmall, img)) continue;  // the difference straddles a kink
                const double fd =
                    (weighted_ce_of(plus, kSmall, img, labels, w) - weighted_ce_of(minus, kSmall, img, labels, w)) / 2e-5;
                worst = std::max(worst, rel_err(fd, grads[i].value(r, c), 1e-9));
                ++checked;
            }
    }
    EXPECT_LT(worst, 1e-4);
    EXPECT_GE(checked, 100);
}

TEST(Segnet, MetricHeadGradientMatchesFiniteDifferences) {
    Rng rng(7);
    const auto metric = init_metric_network<double>(kSmall, 3);
    const auto features = random_tensor<double>(3, 4, kSmall.feature_dim, rng, 0.0, 1.0);
    const auto dir = random_tensor<double>(12, 16, kSmall.metric_dim, rng);
    auto objective = [&](const NetworkParams<double>& m) {
        return (forward_metric(m, kSmall, features).full.data.array() * dir.data.array()).sum();
    };
    const auto fwd = forward_metric(metric, kSmall, features, true);
    const auto grads = backward_metric(metric, kSmall, fwd, dir);
    for (std::size_t i = 0; i < metric.size(); ++i)
        for (int probe = 0; probe < 4; ++probe) {
            const auto r = uniform_int(rng, 0, static_cast<int>(metric[i].value.rows()) - 1);
            const auto c = uniform_int(rng, 0, static_cast<int>(metric[i].value.cols()) - 1);
            auto plus = metric, minus = metric;
            plus[i].value(r, c) += 1e-5;
            minus[i].value(r, c) -= 1e-5;
            const double fd = (objective(plus) - objective(minus)) / 2e-5;
            EXPECT_LT(rel_err(fd, grads[i].value(r, c), 1e-9), 1e-4) << metric[i].name;
        }
}

TEST(Segnet, NetworkParamsArithmetic) {
    auto a = init_network<double>(kSmall, 1);
    const auto b = a;
    a += b;
    a *= 0.5;
    EXPECT_TRUE(a == b);
    EXPECT_TRUE(a.same_structure(a.zeros_like()));
    EXPECT_EQ(a.find("classifier.fc2.weight").group, ParamGroup::classifier);
    EXPECT_THROW(a.find("nope"), ConfigError);
    EXPECT_TRUE(a.cast<float>().cast<double>().same_structure(a));
}
