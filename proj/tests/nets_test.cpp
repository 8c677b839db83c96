#include <catch2/catch.hpp>

#include "support/gradcheck.hpp"
#include "vxc/nets.hpp"

using vxc::Mode;
using vxc::NetConfig;
using vxc::Shape;
using vxc::Tensor;

namespace {

NetConfig tiny_config() {
    NetConfig cfg;
    cfg.image_side = 16;
    cfg.channels = 1;
    cfg.voxel_count = 8;
    cfg.base_side = 2;
    cfg.decoder_channels = 8;
    cfg.encoder_channels = 8;
    cfg.n_blocks = 3;
    cfg.frontend.filters = 8;
    cfg.phi.c1 = 4;
    cfg.phi.c2 = 6;
    cfg.seed = 42;
    return cfg;
}

template <class T>
Tensor<T> random_images(const NetConfig& cfg, std::size_t n, std::uint64_t seed) {
    vxc::Rng rng(seed);
    std::vector<T> v(n * cfg.channels * cfg.image_side * cfg.image_side);
    for (auto& x : v) x = static_cast<T>(rng.uniform());
    return Tensor<T>::from_vector(std::move(v), {n, cfg.channels, cfg.image_side, cfg.image_side});
}

}  // namespace

TEST_CASE("net config invariants") {
    auto cfg = tiny_config();
    CHECK_NOTHROW(cfg.validate());
    cfg.image_side = 20;  // not base * 2^blocks
    CHECK_THROWS_AS(cfg.validate(), vxc::ConfigError);
    cfg = tiny_config();
    cfg.channels = 2;
    CHECK_THROWS_AS(cfg.validate(), vxc::ConfigError);
    cfg = tiny_config();
    cfg.voxel_count = 0;
    CHECK_THROWS_AS(cfg.validate(), vxc::ConfigError);

    // paper-scale geometry: 14 * 2^3 = 112
    NetConfig paper;
    paper.image_side = 112;
    paper.channels = 3;
    paper.voxel_count = 100;
    CHECK_NOTHROW(paper.validate());
    CHECK(paper.encoder_final_side() == 7);
}

TEST_CASE("decoder upsamples base_side to image_side with sigmoid range") {
    auto cfg = tiny_config();
    auto dec = vxc::build_decoder<float>(cfg, 1);
    vxc::Rng rng(5);
    std::vector<float> rv(3 * cfg.voxel_count);
    for (auto& v : rv) v = static_cast<float>(rng.normal());
    auto r = Tensor<float>::from_vector(rv, {3, cfg.voxel_count});
    auto img = vxc::decode(dec, r, Mode::train);
    REQUIRE(img.shape() == Shape{3, 1, 16, 16});
    for (std::size_t i = 0; i < img.numel(); ++i) {
        CHECK(img.data()[i] >= 0.f);
        CHECK(img.data()[i] <= 1.f);
    }

    // zero voxel vector still produces a valid deterministic image
    auto z = Tensor<float>::zeros({1, cfg.voxel_count});
    auto d2 = vxc::build_decoder<float>(cfg, 1);
    auto a = vxc::decode(d2, z, Mode::train);
    auto d3 = vxc::build_decoder<float>(cfg, 1);
    auto b = vxc::decode(d3, z, Mode::train);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("decoder eval mode is pure after stats exist") {
    auto cfg = tiny_config();
    auto dec = vxc::build_decoder<float>(cfg, 9);
    vxc::Rng rng(6);
    std::vector<float> rv(4 * cfg.voxel_count);
    for (auto& v : rv) v = static_cast<float>(rng.normal());
    auto r = Tensor<float>::from_vector(rv, {4, cfg.voxel_count});
    {
        vxc::NoGradGuard ng;
        vxc::decode(dec, r, Mode::train);  // warm running stats
    }
    vxc::NoGradGuard ng;
    auto a = vxc::decode(dec, r, Mode::eval);
    auto b = vxc::decode(dec, r, Mode::eval);
    for (std::size_t i = 0; i < a.numel(); ++i) REQUIRE(a.data()[i] == b.data()[i]);
}

TEST_CASE("encoder maps image batches to voxel rows") {
    auto cfg = tiny_config();
    auto bank = vxc::FeatureBank<float>::make(cfg, 7);
    auto enc = vxc::build_encoder<float>(cfg, bank, 8);
    auto s = random_images<float>(cfg, 5, 11);
    auto r = vxc::encode(enc, s, Mode::train);
    REQUIRE(r.shape() == Shape{5, cfg.voxel_count});

    // eval mode: same image twice -> identical responses
    vxc::NoGradGuard ng;
    auto r1 = vxc::encode(enc, s, Mode::eval);
    auto r2 = vxc::encode(enc, s, Mode::eval);
    for (std::size_t i = 0; i < r1.numel(); ++i) REQUIRE(r1.data()[i] == r2.data()[i]);

    auto bad = Tensor<float>::zeros({2, 1, 8, 8});
    CHECK_THROWS_AS(vxc::encode(enc, bad, Mode::eval), vxc::ConfigError);
}

TEST_CASE("encoder front-end stays frozen through optimization") {
    auto cfg = tiny_config();
    auto bank = vxc::FeatureBank<float>::make(cfg, 7);
    auto enc = vxc::build_encoder<float>(cfg, bank, 8);
    const auto bank_sum_before = enc.bank.checksum();

    auto s = random_images<float>(cfg, 4, 21);
    auto opt = vxc::OptimizerState<float>::sgd(0.1f, 0.9f);
    for (int it = 0; it < 3; ++it) {
        enc.params.zero_grad();
        auto r = vxc::encode(enc, s, Mode::train);
        auto loss = vxc::mean(vxc::mul(r, r));
        vxc::backward(loss);
        opt.step(enc.params);
    }
    CHECK(enc.bank.checksum() == bank_sum_before);
}

TEST_CASE("round-trip shapes compose") {
    auto cfg = tiny_config();
    auto bank = vxc::FeatureBank<float>::make(cfg, 3);
    auto enc = vxc::build_encoder<float>(cfg, bank, 4);
    auto dec = vxc::build_decoder<float>(cfg, 5);
    auto s = random_images<float>(cfg, 2, 31);
    auto r = vxc::encode(enc, s, Mode::train);
    auto s2 = vxc::decode(dec, r, Mode::train);
    CHECK(s2.shape() == s.shape());
    auto r2 = vxc::encode(enc, s2, Mode::train);
    CHECK(r2.shape() == r.shape());
}

TEST_CASE("feature bank is deterministic and phi separates images") {
    auto cfg = tiny_config();
    auto b1 = vxc::FeatureBank<float>::make(cfg, 7);
    auto b2 = vxc::FeatureBank<float>::make(cfg, 7);
    CHECK(b1.checksum() == b2.checksum());
    auto b3 = vxc::FeatureBank<float>::make(cfg, 8);
    CHECK(b1.checksum() != b3.checksum());

    auto a = random_images<float>(cfg, 1, 41);
    auto b = random_images<float>(cfg, 1, 42);
    vxc::NoGradGuard ng;
    auto [fa1, fa2] = vxc::feature_extract(b1, a);
    auto [ga1, ga2] = vxc::feature_extract(b1, a);
    for (std::size_t i = 0; i < fa1.numel(); ++i) REQUIRE(fa1.data()[i] == ga1.data()[i]);
    auto [fb1, fb2] = vxc::feature_extract(b1, b);
    double dist = 0;
    for (std::size_t i = 0; i < fa2.numel(); ++i) {
        const double d = fa2.data()[i] - fb2.data()[i];
        dist += d * d;
    }
    CHECK(dist > 0.0);
}

TEST_CASE("encoder decoder and phi pass finite-difference checks") {
    auto cfg = tiny_config();
    cfg.image_side = 8;
    cfg.base_side = 2;
    cfg.n_blocks = 2;
    cfg.voxel_count = 4;

    SECTION("encode gradient w.r.t. input pixels") {
        auto bank = vxc::FeatureBank<double>::make(cfg, 7);
        auto enc = vxc::build_encoder<double>(cfg, bank, 8);
        auto s = random_images<double>(cfg, 2, 51);
        auto probe = vxc_test::random_tensor({2, cfg.voxel_count}, 52);
        auto res = vxc_test::gradcheck(
            [&] {
                // fresh stats per evaluation keep the forward a pure function
                auto e = enc.clone();
                return vxc::sum(vxc::mul(vxc::encode(e, s, Mode::train), probe));
            },
            {s}, 53);
        INFO(res.worst);
        CHECK(res.ok(1e-4));
    }
    SECTION("decode gradient w.r.t. voxels") {
        auto dec = vxc::build_decoder<double>(cfg, 9);
        auto r = vxc_test::random_tensor({2, cfg.voxel_count}, 54);
        auto probe = vxc_test::random_tensor({2, 1, 8, 8}, 55);
        auto res = vxc_test::gradcheck(
            [&] {
                auto d = dec.clone();
                return vxc::sum(vxc::mul(vxc::decode(d, r, Mode::train), probe));
            },
            {r}, 56);
        INFO(res.worst);
        CHECK(res.ok(1e-4));
    }
    SECTION("phi gradient w.r.t. input") {
        auto bank = vxc::FeatureBank<double>::make(cfg, 7);
        auto s = random_images<double>(cfg, 1, 57);
        auto res = vxc_test::gradcheck(
            [&] {
                auto [f1, f2] = vxc::feature_extract(bank, s);
                return vxc::add(vxc::mean(vxc::mul(f1, f1)), vxc::mean(vxc::mul(f2, f2)));
            },
            {s}, 58);
        CHECK(res.ok(1e-4));
    }
}
