#include <catch2/catch.hpp>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "vxc/ops.hpp"
#include "vxc/rng.hpp"

using vxc::Mode;
using vxc::Shape;
using vxc::Tensor;

TEST_CASE("conv2d of all-ones counts kernel overlap") {
    auto x = Tensor<float>::filled({1, 1, 4, 4}, 1.f);
    auto w = Tensor<float>::filled({1, 1, 3, 3}, 1.f);
    auto y = vxc::conv2d(x, w, 1, 1);
    REQUIRE(y.shape() == Shape{1, 1, 4, 4});
    // interior pixels see the full 3x3 window, corners a 2x2 one
    CHECK(y.data()[1 * 4 + 1] == Approx(9.f));
    CHECK(y.data()[1 * 4 + 2] == Approx(9.f));
    CHECK(y.data()[0] == Approx(4.f));
    CHECK(y.data()[3] == Approx(4.f));
    CHECK(y.data()[15] == Approx(4.f));
}

TEST_CASE("conv2d output dims follow the shape formula") {
    auto x = Tensor<float>::zeros({2, 3, 8, 8});
    auto w = Tensor<float>::zeros({5, 3, 3, 3});
    CHECK(vxc::conv2d(x, w, 2, 1).shape() == Shape{2, 5, 4, 4});

    // property: random valid geometries
    vxc::Rng rng(99);
    for (int i = 0; i < 30; ++i) {
        const std::size_t H = static_cast<std::size_t>(rng.uniform_int(3, 12));
        const std::size_t W = static_cast<std::size_t>(rng.uniform_int(3, 12));
        const std::size_t K = static_cast<std::size_t>(rng.uniform_int(1, 3));
        const std::size_t s = static_cast<std::size_t>(rng.uniform_int(1, 2));
        const std::size_t p = static_cast<std::size_t>(rng.uniform_int(0, 1));
        if (K > H + 2 * p || K > W + 2 * p) continue;
        auto xi = Tensor<float>::zeros({1, 2, H, W});
        auto wi = Tensor<float>::zeros({3, 2, K, K});
        auto yi = vxc::conv2d(xi, wi, s, p);
        CHECK(yi.dim(2) == (H + 2 * p - K) / s + 1);
        CHECK(yi.dim(3) == (W + 2 * p - K) / s + 1);
    }
}

TEST_CASE("conv2d matches the 6-loop oracle") {
    vxc::Rng rng(7);
    std::vector<float> xv(1 * 2 * 5 * 5), wv(3 * 2 * 3 * 3);
    for (auto& v : xv) v = static_cast<float>(rng.uniform() * 2 - 1);
    for (auto& v : wv) v = static_cast<float>(rng.uniform() * 2 - 1);
    auto x = Tensor<float>::from_vector(xv, {1, 2, 5, 5});
    auto w = Tensor<float>::from_vector(wv, {3, 2, 3, 3});
    for (std::size_t stride : {1, 2})
        for (std::size_t pad : {0, 1}) {
            auto y = vxc::conv2d(x, w, stride, pad);
            std::size_t Ho, Wo;
            auto ref = vxc_test::conv2d_oracle(xv, 1, 2, 5, 5, wv, 3, 3, stride, pad, Ho, Wo);
            REQUIRE(y.shape() == Shape{1, 3, Ho, Wo});
            for (std::size_t i = 0; i < ref.size(); ++i)
                CHECK(y.data()[i] == Approx(ref[i]).margin(1e-5));
        }
}

TEST_CASE("conv2d rejects mismatched channels with offending dims") {
    auto x = Tensor<float>::zeros({1, 2, 5, 5});
    auto w = Tensor<float>::zeros({3, 4, 3, 3});
    CHECK_THROWS_WITH(vxc::conv2d(x, w, 1, 1), Catch::Contains("channels"));
    auto big = Tensor<float>::zeros({3, 2, 9, 9});
    CHECK_THROWS_AS(vxc::conv2d(x, big, 1, 1), vxc::ConfigError);
}

TEST_CASE("relu and sigmoid basics") {
    auto x = Tensor<float>::from_vector({-1.f, 0.f, 2.f}, {3});
    auto y = vxc::relu(x);
    CHECK(y.data()[0] == 0.f);
    CHECK(y.data()[1] == 0.f);
    CHECK(y.data()[2] == 2.f);

    auto s = vxc::sigmoid(Tensor<float>::from_vector({-15.f, 0.f, 15.f}, {3}));
    CHECK(s.data()[0] > 0.f);
    CHECK(s.data()[0] < 1e-6f);
    CHECK(s.data()[1] == Approx(0.5f));
    CHECK(s.data()[2] < 1.f);
    CHECK(s.data()[2] > 1.f - 1e-6f);
    // extreme inputs saturate in float but never leave [0,1] or go non-finite
    auto e = vxc::sigmoid(Tensor<float>::from_vector({-500.f, 500.f}, {2}));
    CHECK(e.data()[0] >= 0.f);
    CHECK(e.data()[1] <= 1.f);
    CHECK(e.all_finite());
}

TEST_CASE("upsample2x replicates nearest neighbours") {
    auto x = Tensor<float>::from_vector({1, 2, 3, 4}, {1, 1, 2, 2});
    auto y = vxc::upsample2x(x);
    REQUIRE(y.shape() == Shape{1, 1, 4, 4});
    const std::vector<float> want = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(y.data()[i] == want[i]);
}

TEST_CASE("batch_norm train mode normalizes per channel") {
    vxc::Rng rng(5);
    std::vector<float> xv(8 * 3 * 6 * 6);
    for (auto& v : xv) v = static_cast<float>(rng.normal() * 3 + 2);
    auto x = Tensor<float>::from_vector(xv, {8, 3, 6, 6});
    auto gamma = Tensor<float>::filled({3}, 1.f);
    auto beta = Tensor<float>::zeros({3});
    auto stats = vxc::BnStats<float>::make(3);
    auto y = vxc::batch_norm(x, gamma, beta, stats, Mode::train);

    const std::size_t M = 8 * 6 * 6;
    for (std::size_t c = 0; c < 3; ++c) {
        double mean = 0, var = 0;
        for (std::size_t n = 0; n < 8; ++n)
            for (std::size_t i = 0; i < 36; ++i) mean += y.data()[(n * 3 + c) * 36 + i];
        mean /= M;
        for (std::size_t n = 0; n < 8; ++n)
            for (std::size_t i = 0; i < 36; ++i) {
                const double d = y.data()[(n * 3 + c) * 36 + i] - mean;
                var += d * d;
            }
        var /= M;
        CHECK(std::abs(mean) < 1e-5);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }
    CHECK(stats.initialized());
}

TEST_CASE("batch_norm error paths") {
    auto gamma = Tensor<float>::filled({2}, 1.f);
    auto beta = Tensor<float>::zeros({2});
    auto stats = vxc::BnStats<float>::make(2);
    auto empty = Tensor<float>::zeros({0, 2, 3, 3});
    CHECK_THROWS_AS(vxc::batch_norm(empty, gamma, beta, stats, Mode::train), vxc::ConfigError);
    auto x = Tensor<float>::zeros({2, 2, 3, 3});
    CHECK_THROWS_AS(vxc::batch_norm(x, gamma, beta, stats, Mode::eval), vxc::ConfigError);
    vxc::batch_norm(x, gamma, beta, stats, Mode::train);
    CHECK_NOTHROW(vxc::batch_norm(x, gamma, beta, stats, Mode::eval));
}

TEST_CASE("layer gradients match finite differences") {
    SECTION("conv2d") {
        auto x = vxc_test::random_tensor({2, 2, 5, 5}, 41);
        auto w = vxc_test::random_tensor({3, 2, 3, 3}, 42);
        auto t = vxc_test::random_tensor({2, 3, 5, 5}, 43);
        auto res = vxc_test::gradcheck(
            [&] {
                auto d = vxc::sub(vxc::conv2d(x, w, 1, 1), t);
                return vxc::sum(vxc::mul(d, d));
            },
            {x, w}, 44);
        INFO(res.worst);
        CHECK(res.ok(1e-4));
    }
    SECTION("fully_connected") {
        auto x = vxc_test::random_tensor({4, 6}, 51);
        auto w = vxc_test::random_tensor({6, 3}, 52);
        auto b = vxc_test::random_tensor({3}, 53);
        auto res = vxc_test::gradcheck(
            [&] {
                auto y = vxc::fully_connected(x, w, b);
                return vxc::mean(vxc::mul(y, y));
            },
            {x, w, b}, 54);
        CHECK(res.ok(1e-4));
    }
    SECTION("batch_norm train and eval") {
        auto x = vxc_test::random_tensor({3, 2, 4, 4}, 61, 0.5, 2.5);
        auto gamma = vxc_test::random_tensor({2}, 62, 0.5, 1.5);
        auto beta = vxc_test::random_tensor({2}, 63);
        auto stats = vxc::BnStats<double>::make(2);
        auto res = vxc_test::gradcheck(
            [&] {
                auto st = stats.clone();  // keep the outer stats untouched per call
                auto y = vxc::batch_norm(x, gamma, beta, st, Mode::train);
                return vxc::mean(vxc::mul(y, y));
            },
            {x, gamma, beta}, 64);
        INFO(res.worst);
        CHECK(res.ok(1e-4));

        auto warm = stats.clone();
        {
            vxc::NoGradGuard ng;
            vxc::batch_norm(x, gamma, beta, warm, Mode::train);
        }
        auto res_eval = vxc_test::gradcheck(
            [&] {
                auto st = warm.clone();
                auto y = vxc::batch_norm(x, gamma, beta, st, Mode::eval);
                return vxc::mean(vxc::mul(y, y));
            },
            {x, gamma, beta}, 65);
        CHECK(res_eval.ok(1e-4));
    }
    SECTION("upsample2x and channel bias") {
        auto x = vxc_test::random_tensor({2, 3, 3, 3}, 71);
        auto b = vxc_test::random_tensor({3}, 72);
        auto res = vxc_test::gradcheck(
            [&] {
                auto y = vxc::upsample2x(vxc::add_channel_bias(x, b));
                return vxc::mean(vxc::mul(y, y));
            },
            {x, b}, 73);
        CHECK(res.ok(1e-4));
    }
    SECTION("relu and sigmoid") {
        auto x = vxc_test::random_tensor({3, 9}, 81, 0.05, 1.0);  // away from the relu kink
        auto res = vxc_test::gradcheck(
            [&] {
                auto y = vxc::sigmoid(vxc::relu(x));
                return vxc::sum(vxc::mul(y, y));
            },
            {x}, 82);
        CHECK(res.ok(1e-4));
    }
}

TEST_CASE("loss kernel gradients match finite differences") {
    SECTION("l1_mean") {
        auto a = vxc_test::random_tensor({3, 8}, 91);
        auto b = vxc_test::random_tensor({3, 8}, 92);
        auto res = vxc_test::gradcheck([&] { return vxc::l1_mean(a, b); }, {a, b}, 93);
        CHECK(res.ok(1e-4));
    }
    SECTION("tv_loss") {
        auto x = vxc_test::random_tensor({2, 1, 5, 5}, 94);
        auto res = vxc_test::gradcheck([&] { return vxc::tv_loss(x); }, {x}, 95);
        CHECK(res.ok(1e-4));
    }
    SECTION("fmri_pair_loss across alphas") {
        for (double alpha : {0.0, 0.5, 0.9, 1.0}) {
            auto a = vxc_test::random_tensor({2, 12}, 96, 0.2, 1.2);
            auto b = vxc_test::random_tensor({2, 12}, 97, 0.2, 1.2);
            auto res = vxc_test::gradcheck(
                [&] { return vxc::fmri_pair_loss(a, b, alpha); }, {a, b}, 98);
            INFO("alpha " << alpha << " worst " << res.worst);
            CHECK(res.ok(1e-4));
        }
    }
}

TEST_CASE("fmri_pair_loss value contracts") {
    auto r = Tensor<float>::from_vector({1.f, 2.f, 3.f}, {1, 3});
    CHECK(vxc::fmri_pair_loss(r, r, 0.5f).item() == Approx(0.f).margin(1e-7));

    // alpha=1: pure L2 of difference (3,4) -> 5
    auto a = Tensor<float>::from_vector({4.f, 6.f}, {1, 2});
    auto b = Tensor<float>::from_vector({1.f, 2.f}, {1, 2});
    CHECK(vxc::fmri_pair_loss(a, b, 1.0f).item() == Approx(5.f));

    // alpha=0 with orthogonal vectors -> 1
    auto u = Tensor<float>::from_vector({1.f, 0.f}, {1, 2});
    auto v = Tensor<float>::from_vector({0.f, 1.f}, {1, 2});
    CHECK(vxc::fmri_pair_loss(u, v, 0.0f).item() == Approx(1.f));

    // zero-norm fallback: cosine term contributes 1, never NaN
    auto z = Tensor<float>::zeros({1, 2});
    auto w = Tensor<float>::from_vector({1.f, 1.f}, {1, 2});
    const float val = vxc::fmri_pair_loss(z, w, 0.0f).item();
    CHECK(std::isfinite(val));
    CHECK(val == Approx(1.f));
}

TEST_CASE("fmri_pair_loss skips the cosine branch at alpha=1") {
    auto a = Tensor<float>::from_vector({1.f, 2.f}, {1, 2});
    auto b = Tensor<float>::from_vector({2.f, 1.f}, {1, 2});
    vxc::counters::cosine_branch_evals().store(0);
    vxc::fmri_pair_loss(a, b, 1.0f);
    CHECK(vxc::counters::cosine_branch_evals().load() == 0);
    vxc::fmri_pair_loss(a, b, 0.9f);
    CHECK(vxc::counters::cosine_branch_evals().load() == 1);
}

TEST_CASE("tv_loss values") {
    // 2x2 checkerboard: 4 adjacent pairs each differing by 1 -> unnormalized 4,
    // normalized by the 4 elements -> 1
    auto x = Tensor<float>::from_vector({0.f, 1.f, 1.f, 0.f}, {1, 1, 2, 2});
    CHECK(vxc::tv_loss(x).item() == Approx(1.f));

    auto c = Tensor<float>::filled({1, 1, 4, 4}, 0.7f);
    CHECK(vxc::tv_loss(c).item() == Approx(0.f));

    // homogeneity: tv(c*x) = |c| * tv(x)
    auto xr = vxc_test::random_tensor({1, 2, 6, 6}, 105);
    std::vector<float> xf(xr.numel()), xs(xr.numel());
    for (std::size_t i = 0; i < xf.size(); ++i) {
        xf[i] = static_cast<float>(xr.data()[i]);
        xs[i] = -2.5f * xf[i];
    }
    auto t1 = vxc::tv_loss(Tensor<float>::from_vector(xf, {1, 2, 6, 6})).item();
    auto t2 = vxc::tv_loss(Tensor<float>::from_vector(xs, {1, 2, 6, 6})).item();
    CHECK(t2 == Approx(2.5f * t1).epsilon(1e-4));
}
