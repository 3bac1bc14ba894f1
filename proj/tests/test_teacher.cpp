#include <gtest/gtest.h>

#include "support.hpp"

using namespace stvm;

namespace {

NetworkParams<double> constant_params(double v) {
    NetworkParams<double> p = init_network<double>(ArchConfig{3, 8, 4, 2}, 0);
    for (auto& q : p.params) q.value.setConstant(v);
    return p;
}

} // namespace

TEST(Teacher, EmaFollowsClosedForm) {
    TeacherState<double> t{constant_params(0.0), 1, 0.05, 0};
    const auto student = constant_params(1.0);
    for (long it = 1; it <= 10; ++it) EXPECT_TRUE(ema_update(t, student, it));
    const double expected = 1.0 - std::pow(0.95, 10);
    EXPECT_NEAR(expected, 0.401263060761621, 1e-12);
    for (const auto& p : t.params.params) EXPECT_NEAR((p.value.array() - expected).abs().maxCoeff(), 0.0, 1e-12);
}

TEST(Teacher, UpdatesOnlyAtPeriodBoundaries) {
    TeacherState<double> t{constant_params(0.0), 100, 1e-3, 0};
    const auto student = constant_params(1.0);
    const auto before = t.params;
    for (long it = 1; it < 100; ++it) EXPECT_FALSE(ema_update(t, student, it));
    EXPECT_TRUE(t.params == before);
    EXPECT_TRUE(ema_update(t, student, 100));
    EXPECT_EQ(t.last_update_iter, 100);
    EXPECT_FALSE(ema_update(t, student, 150));
    EXPECT_TRUE(ema_update(t, student, 200));
}

TEST(Teacher, SmoothingOneCopiesStudent) {
    TeacherState<double> t{constant_params(0.0), 1, 1.0, 0};
    const auto student = constant_params(3.0);
    ema_update(t, student, 1);
    EXPECT_TRUE(t.params == student);
}

TEST(Teacher, IdenticalTeacherAndStudentStayFixed) {
    const auto p = constant_params(0.7);
    TeacherState<double> t{p, 1, 0.3, 0};
    ema_update(t, p, 1);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR((t.params[i].value - p[i].value).norm(), 0.0, 1e-15);
}

TEST(Teacher, RejectsBadSettingsAndStructure) {
    TeacherState<double> bad{constant_params(0.0), 0, 0.1, 0};
    EXPECT_THROW(ema_update(bad, constant_params(1.0), 1), ConfigError);
    TeacherState<double> bad2{constant_params(0.0), 1, 0.0, 0};
    EXPECT_THROW(ema_update(bad2, constant_params(1.0), 1), ConfigError);
    TeacherState<double> t{constant_params(0.0), 1, 0.1, 0};
    EXPECT_THROW(ema_update(t, init_network<double>(ArchConfig{4, 8, 4, 2}, 0), 1), ShapeError);
}

TEST(PseudoLabels, ArgmaxAndSoftmaxConfidence) {
    Tensor3<double> z(1, 1, 3);
    z.data << 0.1, 2.0, -1.0;
    const auto pl = pseudo_labels(z);
    EXPECT_EQ(pl.labels[0], 1);
    const double e0 = std::exp(0.1L), e1 = std::exp(2.0L), e2 = std::exp(-1.0L);
    EXPECT_NEAR(pl.confidence[0], e1 / (e0 + e1 + e2), 1e-12);
    EXPECT_NEAR(pl.confidence[0], 0.833781012877836, 1e-12);
}

TEST(PseudoLabels, TiesGoToTheLowestIndexAndUniformGivesOneOverC) {
    Tensor3<double> z(1, 2, 4);
    z.data.setConstant(0.3);
    z.data(1, 2) = 5.0;
    z.data(1, 3) = 5.0;
    const auto pl = pseudo_labels(z);
    EXPECT_EQ(pl.labels[0], 0);
    EXPECT_NEAR(pl.confidence[0], 0.25, 1e-15);
    EXPECT_EQ(pl.labels[1], 2);
}

TEST(PseudoLabels, ConfidenceIsBoundedAndNonFiniteLogitsThrow) {
    Rng rng(1);
    const auto z = stvm::testing::random_tensor<double>(4, 4, 5, rng, -30, 30);
    const auto pl = pseudo_labels(z);
    for (double c : pl.confidence.values) {
        EXPECT_GE(c, 0.2 - 1e-15);
        EXPECT_LE(c, 1.0);
    }
    Tensor3<double> bad(1, 1, 2);
    bad.data(0, 0) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(pseudo_labels(bad), NumericError);
}
