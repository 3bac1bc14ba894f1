#include <gtest/gtest.h>

#include <fstream>

#include "support.hpp"

using namespace stvm;
using namespace stvm::testing;

namespace {

std::string write_file(const std::string& name, const std::string& text) {
    const auto path = scratch_dir("config_" + name) / "c.ini";
    std::ofstream(path) << text;
    return path.string();
}

} // namespace

TEST(Config, DefaultsFileAndOverridesApplyInOrder) {
    const auto path = write_file("precedence", "[train]\nalpha = 3\nbeta = 0.5\n[arch]\nmetric_dim = 32\n");
    const auto c = resolve_config(path, {{"train.beta", "0.7"}});
    EXPECT_EQ(c.train.alpha, 3.0);
    EXPECT_EQ(c.train.beta, 0.7);
    EXPECT_EQ(c.arch.metric_dim, 32);
    EXPECT_EQ(c.train.temperature, desk_profile().train.temperature);
    EXPECT_EQ(c.profile, "desk");
}

TEST(Config, ProfileSelection) {
    EXPECT_EQ(resolve_config("", {}, "paper").arch.metric_dim, 128);
    EXPECT_EQ(resolve_config("", {}, "paper").train.batch_size, 2);
    const auto path = write_file("profile", "[experiment]\nprofile = paper\n");
    EXPECT_EQ(resolve_config(path, {}).profile, "paper");
    EXPECT_EQ(resolve_config(path, {}, "desk").profile, "desk");
    EXPECT_THROW(resolve_config("", {}, "huge"), ConfigError);
}

TEST(Config, ShortKeyAliases) {
    ExperimentConfig c = desk_profile();
    set_field(c, "alpha", "1.5");
    set_field(c, "q_M", "0.3");
    set_field(c, "N_f", "24");
    set_field(c, "tau_MOCM", "0.7");
    set_field(c, "n_MOCM", "4");
    set_field(c, "T", "0.1");
    set_field(c, "quantile", "0.6");
    EXPECT_EQ(c.train.alpha, 1.5);
    EXPECT_EQ(c.train.metric_quantile, 0.3);
    EXPECT_EQ(c.arch.metric_dim, 24);
    EXPECT_EQ(c.train.tau_mocm, 0.7);
    EXPECT_EQ(c.train.n_mocm, 4);
    EXPECT_EQ(c.train.temperature, 0.1);
    EXPECT_EQ(*c.train.st_quantile, 0.6);
    EXPECT_EQ(get_field(c, "q_m"), "0.3");
}

TEST(Config, SnapshotReproducesTheResolvedConfiguration) {
    auto c = resolve_config("", {{"train.lr_metric", "0.0031"}, {"target.palette", "0.1,0.2,0.3;0.4,0.5,0.6"},
                                 {"train.flags", "ST,Aug"}, {"experiment.seeds", "3,5"}});
    const auto path = (scratch_dir("config_snapshot") / "snap.ini").string();
    write_config(c, path);
    auto back = resolve_config(path, {});
    visit_fields(c, [&](const std::string& key, auto& v) { EXPECT_EQ(detail::encode(v), get_field(back, key)) << key; });
    EXPECT_EQ(back.train.lr_metric, 0.0031);
    EXPECT_EQ(back.train.flags.str(), "ST,Aug");
    EXPECT_EQ(back.data.target.palette.size(), 2u);
}

TEST(Config, DoublesSurviveTheTextRoundTrip) {
    ExperimentConfig c = desk_profile();
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        const double v = uniform<double>(rng, 1e-9, 10.0);
        c.train.alpha = v;
        set_field(c, "train.alpha", get_field(c, "train.alpha"));
        EXPECT_EQ(c.train.alpha, v);
    }
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    ExperimentConfig c = desk_profile();
    EXPECT_THROW(set_field(c, "train.learning_rate", "1"), ConfigError);
    EXPECT_THROW(set_field(c, "train.alpha", "fast"), ConfigError);
    EXPECT_THROW(set_field(c, "eval.mst", "maybe"), ConfigError);
    EXPECT_THROW(set_field(c, "train.flags", "ST,MOCM"), ConfigError);
    EXPECT_THROW(resolve_config(write_file("unknown", "[train]\nwarmup = 3\n"), {}), ConfigError);
    EXPECT_THROW(resolve_config(write_file("syntax", "[train\nalpha = 3\n"), {}), ConfigError);
    EXPECT_THROW(resolve_config(write_file("toplevel", "alpha = 3\n"), {}), ConfigError);
    EXPECT_THROW(resolve_config("", {{"train.metric_quantile", "1.5"}}), ConfigError);
    EXPECT_THROW(resolve_config("", {{"arch.feature_dim", "4"}}), ConfigError);
}

TEST(Config, ClassMappingFile) {
    const auto path = write_file("classmap", "num_classes = 3\n7 = 1\n26 = 2\n0 = 0\n");
    const auto m = read_class_mapping(path, 19);
    EXPECT_EQ(m.num_classes, 3);
    EXPECT_EQ(m.map(7), 1);
    EXPECT_EQ(m.map(26), 2);
    EXPECT_EQ(m.map(8), kIgnoreLabel);
    EXPECT_EQ(read_class_mapping("", 6).map(5), 5);
    EXPECT_EQ(read_class_mapping("", 6).map(6), kIgnoreLabel);
    EXPECT_THROW(read_class_mapping(write_file("classmap_bad", "[x]\n1 = 2\n"), 3), ConfigError);
}
