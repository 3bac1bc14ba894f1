#include <gtest/gtest.h>

#include <fstream>

#include "support.hpp"

using namespace stvm;
using namespace stvm::testing;

TEST(Archive, RoundTripIsBitExact) {
    const auto dir = scratch_dir("ckpt_archive");
    Archive ar;
    ar.meta["note"] = "hello world";
    ar.meta["empty"] = "";
    std::vector<float> special{0.0f, -0.0f, 1e-38f, std::numeric_limits<float>::denorm_min(),
                               std::numeric_limits<float>::infinity(), std::numeric_limits<float>::quiet_NaN()};
    ar.put("special", {2, 3}, special);
    ar.put("scalar", {}, {3.5f});
    ar.save((dir / "a.ckpt").string());
    const auto back = Archive::load((dir / "a.ckpt").string());
    EXPECT_EQ(back.meta, ar.meta);
    EXPECT_EQ(back.names(), ar.names());
    const auto& s = back.get("special");
    EXPECT_EQ(s.shape, (std::vector<std::uint32_t>{2, 3}));
    for (std::size_t i = 0; i < special.size(); ++i)
        EXPECT_EQ(std::bit_cast<std::uint32_t>(s.data[i]), std::bit_cast<std::uint32_t>(special[i]));
    back.save((dir / "b.ckpt").string());
    std::ifstream a(dir / "a.ckpt", std::ios::binary), b(dir / "b.ckpt", std::ios::binary);
    EXPECT_EQ(std::string(std::istreambuf_iterator<char>(a), {}), std::string(std::istreambuf_iterator<char>(b), {}));
}

TEST(Archive, NetworkRoundTrip) {
    const auto dir = scratch_dir("ckpt_network");
    const ArchConfig arch{5, 16, 8, 8};
    const auto net = init_network<float>(arch, 42);
    save_network((dir / "n.ckpt").string(), net, arch, 42, 1234);
    const auto back = load_network((dir / "n.ckpt").string());
    EXPECT_EQ(back.arch, arch);
    EXPECT_EQ(back.seed, 42u);
    EXPECT_EQ(back.iteration, 1234);
    EXPECT_TRUE(back.params == net);
}

TEST(Archive, ErrorsAreReported) {
    const auto dir = scratch_dir("ckpt_errors");
    EXPECT_THROW(Archive::load((dir / "missing.ckpt").string()), IoError);
    {
        std::ofstream os(dir / "junk.ckpt");
        os << "not an archive";
    }
    EXPECT_THROW(Archive::load((dir / "junk.ckpt").string()), DataError);
    Archive ar;
    EXPECT_THROW(ar.put("x", {2, 2}, {1.0f}), ShapeError);
    EXPECT_THROW(ar.get("x"), DataError);
    EXPECT_THROW(ar.meta_at("x"), DataError);
    put_arch(ar, ArchConfig{});
    ar.save((dir / "arch_only.ckpt").string());
    EXPECT_THROW(load_network((dir / "arch_only.ckpt").string()), DataError);
}

TEST(Archive, TruncatedFileIsADataError) {
    const auto dir = scratch_dir("ckpt_truncated");
    const ArchConfig arch{3, 8, 4, 4};
    save_network((dir / "n.ckpt").string(), init_network<float>(arch, 1), arch, 1, 0);
    std::ifstream is(dir / "n.ckpt", std::ios::binary);
    std::string bytes(std::istreambuf_iterator<char>(is), {});
    {
        std::ofstream os(dir / "cut.ckpt", std::ios::binary);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    EXPECT_THROW(load_network((dir / "cut.ckpt").string()), Error);
}
