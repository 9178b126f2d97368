#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>

#include "farl/io.hpp"
#include "farl/model.hpp"

using namespace farl;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("farl_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

Image gradient(std::size_t h, std::size_t w, std::size_t c) {
    Image img(h, w, c);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<double>((i * 37) % 256) / 255.0;
    return img;
}

}  // namespace

TEST(Netpbm, WhitePixelByteCount) {
    // 11 header bytes ("P6", "\n", "1 1", "\n", "255", "\n") plus one RGB triple.
    const std::string bytes = io::encode_netpbm(Image(1, 1, 3, 1.0));
    EXPECT_EQ(bytes.size(), 14u);
    EXPECT_EQ(bytes, std::string("P6\n1 1\n255\n\xff\xff\xff", 14));
}

TEST(Netpbm, RoundTripIsExactOnByteGrid) {
    for (std::size_t c : {1u, 3u}) {
        const Image img = gradient(5, 7, c);
        EXPECT_EQ(io::decode_netpbm(io::encode_netpbm(img), c), img);
    }
    const fs::path dir = scratch_dir("pnm");
    io::write_ppm(dir / "a.ppm", gradient(4, 4, 3));
    io::write_pgm(dir / "b.pgm", gradient(4, 4, 1));
    EXPECT_EQ(io::read_ppm(dir / "a.ppm"), gradient(4, 4, 3));
    EXPECT_EQ(io::read_pgm(dir / "b.pgm"), gradient(4, 4, 1));
    EXPECT_THROW(io::read_pgm(dir / "a.ppm"), io::IoError);
    fs::remove_all(dir);
}

TEST(Netpbm, OutOfRangeClamps) {
    Image img(1, 2, 1);
    img.pixels = {-0.5, 2.0};
    const std::string bytes = io::encode_netpbm(img);
    EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 2]), 0);
    EXPECT_EQ(static_cast<unsigned char>(bytes.back()), 255);
}

TEST(Netpbm, CommentsAccepted) {
    const std::string bytes = std::string("P5\n# made by hand\n2 1\n255\n") + '\x00' + '\xff';
    const Image img = io::decode_netpbm(bytes);
    EXPECT_EQ(img.width, 2u);
    EXPECT_EQ(img.pixels[1], 1.0);
}

TEST(Netpbm, MalformedInputReportsOffset) {
    auto offset_of = [](const std::string& bytes) -> long {
        try {
            io::decode_netpbm(bytes);
        } catch (const io::ParseError& e) {
            EXPECT_NE(std::string(e.what()).find("at byte"), std::string::npos);
            return static_cast<long>(e.offset());
        }
        return -1;
    };
    EXPECT_EQ(offset_of("P3\n1 1\n255\n"), 0);
    EXPECT_GE(offset_of("P6\n1 1\n65535\n\x00\x00"), 0);
    EXPECT_GE(offset_of("P6\n2 2\n255\n\x01\x02"), 11);
    EXPECT_GE(offset_of("P6\n1 1\n255\n\x01\x02\x03\x04"), 0);
    EXPECT_GE(offset_of("P6\n1 x\n255\n"), 0);
    EXPECT_GE(offset_of(""), 0);
}

TEST(Checkpoint, RoundTripPreservesBits) {
    io::Checkpoint ck;
    ck.meta["kind"] = "adapter";
    ck.meta["note"] = "spaces and = signs";
    Tensor t({2, 3});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::nextafter(0.1 * static_cast<double>(i), 1.0);
    ck.tensors["w"] = t;
    ck.tensors["bias"] = Tensor({1, 4}, -1.5);
    const io::Checkpoint back = io::decode_checkpoint(io::encode_checkpoint(ck));
    EXPECT_EQ(back.meta, ck.meta);
    ASSERT_EQ(back.tensors.size(), 2u);
    EXPECT_EQ(back.tensors.at("w").shape(), t.shape());
    EXPECT_EQ(max_abs_diff(back.tensors.at("w"), t), 0.0);
    EXPECT_EQ(back.require("kind"), "adapter");
    EXPECT_THROW(back.require("absent"), io::IoError);
}

TEST(Checkpoint, ModuleRoundTrip) {
    EncoderConfig enc;
    enc.layers = 2;
    enc.inject_layer = 1;
    enc.d_model = 16;
    enc.heads = 2;
    enc.d_embed = 8;
    nn::Rng r1(1), r2(2);
    Backbone a(enc, Vocabulary(data::default_vocabulary()), r1);
    Backbone b(enc, Vocabulary(data::default_vocabulary()), r2);
    ASSERT_NE(nn::parameter_hash(a), nn::parameter_hash(b));
    io::Checkpoint ck;
    ck.add_module(a, "bb.");
    io::decode_checkpoint(io::encode_checkpoint(ck)).load_module(b, "bb.");
    EXPECT_EQ(nn::parameter_hash(a), nn::parameter_hash(b));

    EncoderConfig wider = enc;
    wider.d_model = 32;
    nn::Rng r3(3);
    Backbone c(wider, Vocabulary(data::default_vocabulary()), r3);
    EXPECT_THROW(ck.load_module(c, "bb."), io::IoError);
    EXPECT_THROW(ck.load_module(b, "other."), io::IoError);
}

TEST(Checkpoint, CorruptBytesRejected) {
    io::Checkpoint ck;
    ck.tensors["w"] = Tensor({2, 2}, 1.0);
    const std::string good = io::encode_checkpoint(ck);
    EXPECT_THROW(io::decode_checkpoint("NOTACKPT" + good.substr(8)), io::ParseError);
    EXPECT_THROW(io::decode_checkpoint(good.substr(0, good.size() - 3)), io::ParseError);
    EXPECT_THROW(io::decode_checkpoint(good + "x"), io::ParseError);
    EXPECT_THROW(io::load_checkpoint("/nonexistent/farl.ckpt"), io::IoError);
}

TEST(Config, ParseTypesAndErrors) {
    const auto cfg = io::Config::parse("# comment\n lr = 0.001 \nepochs=12\n\nflag=true\nname = run a\n");
    EXPECT_EQ(cfg.get("lr", 1.0), 0.001);
    EXPECT_EQ(cfg.get("epochs", std::uint64_t{1}), 12u);
    EXPECT_TRUE(cfg.get("flag", false));
    EXPECT_EQ(cfg.get("name", std::string()), "run a");
    EXPECT_EQ(cfg.get("missing", 2.5), 2.5);
    EXPECT_THROW(cfg.get("name", 1.0), io::IoError);
    EXPECT_THROW(cfg.get("lr", std::uint64_t{0}), io::IoError);
    EXPECT_THROW(io::Config::parse("novalue\n"), io::IoError);
    EXPECT_THROW(cfg.check_keys({"lr", "epochs", "flag"}), io::IoError);
    EXPECT_NO_THROW(cfg.check_keys({"lr", "epochs", "flag", "name"}));
}

TEST(Config, LaterSetOverridesFileValue) {
    auto cfg = io::Config::parse("seed=3\n");
    cfg.set("seed", "9");
    EXPECT_EQ(cfg.get("seed", std::uint64_t{0}), 9u);
}

TEST(Formatting, FixedAndExact) {
    EXPECT_EQ(io::fixed(81.56789), "81.5679");
    EXPECT_EQ(io::fixed(2.0, 2), "2.00");
    for (double v : {0.1, 1.0 / 3.0, -2.5e-17, 12345.678})
        EXPECT_EQ(std::stod(io::exact(v)), v);
}

TEST(DatasetDir, RoundTrip) {
    const fs::path dir = scratch_dir("ds");
    const data::Dataset ds = data::generate(12, 4);
    io::save_dataset(dir, ds);
    const data::Dataset back = io::load_dataset(dir);
    ASSERT_EQ(back.samples.size(), ds.samples.size());
    EXPECT_EQ(back.split.base_classes, ds.split.base_classes);
    EXPECT_EQ(back.split.shifted_styles, ds.split.shifted_styles);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        EXPECT_EQ(back.samples[i].image, ds.samples[i].image);
        EXPECT_EQ(back.samples[i].class_id, ds.samples[i].class_id);
        EXPECT_EQ(back.samples[i].role, ds.samples[i].role);
        EXPECT_EQ(back.samples[i].style, ds.samples[i].style);
        EXPECT_EQ(back.samples[i].pose.rotation, ds.samples[i].pose.rotation);
    }
    fs::remove_all(dir);
    EXPECT_THROW(io::load_dataset(dir), io::IoError);
}
