#include <catch2/catch.hpp>

#include <cmath>
#include <complex>
#include <set>

#include "vxc/cortexsim.hpp"

using vxc::Nonlinearity;
using vxc::Tensor;

TEST_CASE("make_brain is deterministic with unit-norm filters") {
    auto a = vxc::make_brain(16, 12, 1, 0.1, Nonlinearity::identity, 5);
    auto b = vxc::make_brain(16, 12, 1, 0.1, Nonlinearity::identity, 5);
    CHECK(a.filter_checksum() == b.filter_checksum());
    auto c = vxc::make_brain(16, 12, 1, 0.1, Nonlinearity::identity, 6);
    CHECK(a.filter_checksum() != c.filter_checksum());

    const std::size_t n = 12 * 12;
    for (std::size_t v = 0; v < 16; ++v) {
        double norm2 = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double x = a.filters[v * n + i];
            norm2 += x * x;
        }
        CHECK(std::sqrt(norm2) == Approx(1.0).margin(1e-6));
    }
}

TEST_CASE("respond contracts") {
    auto brain = vxc::make_brain(8, 12, 1, 0.0, Nonlinearity::identity, 7);
    std::vector<float> zero(12 * 12, 0.f);
    auto r = vxc::respond(brain, zero.data(), 1);
    for (float v : r) CHECK(v == 0.f);

    // sigma = 0: pure function of the image
    auto img = vxc::sample_image(12, 1, 3);
    auto r1 = vxc::respond(brain, img.data(), 1);
    auto r2 = vxc::respond(brain, img.data(), 2);
    for (std::size_t i = 0; i < r1.size(); ++i) CHECK(r1[i] == r2[i]);
}

TEST_CASE("respond noise std matches sigma empirically") {
    const double sigma = 0.35;
    auto brain = vxc::make_brain(4, 12, 1, sigma, Nonlinearity::identity, 9);
    auto clean = brain;
    clean.noise_sigma.assign(4, 0.f);
    auto img = vxc::sample_image(12, 1, 13);
    const auto base = vxc::respond(clean, img.data(), 0);

    const int draws = 10000;
    std::vector<double> ss(4, 0.0);
    for (int d = 0; d < draws; ++d) {
        const auto r = vxc::respond(brain, img.data(), vxc::mix_seed(77, d));
        for (std::size_t v = 0; v < 4; ++v) {
            const double e = r[v] - base[v];
            ss[v] += e * e;
        }
    }
    for (std::size_t v = 0; v < 4; ++v)
        CHECK(std::sqrt(ss[v] / draws) == Approx(sigma).epsilon(0.03));
}

TEST_CASE("sample_images are deterministic, in range and distinct") {
    auto a = vxc::sample_images(6, 16, 1, 11);
    auto b = vxc::sample_images(6, 16, 1, 11);
    for (std::size_t i = 0; i < a.numel(); ++i) REQUIRE(a.data()[i] == b.data()[i]);
    for (std::size_t i = 0; i < a.numel(); ++i) {
        REQUIRE(a.data()[i] >= 0.f);
        REQUIRE(a.data()[i] <= 1.f);
    }
    std::set<std::uint64_t> hashes;
    for (std::size_t i = 0; i < 6; ++i)
        hashes.insert(vxc::fnv1a64_span(a.data() + i * 256, 256));
    CHECK(hashes.size() == 6);
}

TEST_CASE("grf power spectrum has roughly 1/f^2 falloff") {
    // oracle: forward DFT of the raw field, radially averaged power,
    // log-log slope fitted over the usable band
    const std::size_t side = 32;
    std::vector<double> logf, logp;
    for (int rep = 0; rep < 6; ++rep) {
        auto field = vxc::sample_grf(side, 100 + rep);
        std::vector<std::complex<double>> f(side * side);
        for (std::size_t i = 0; i < f.size(); ++i) f[i] = {field[i], 0.0};
        vxc::detail::dft2(f, side, false);

        std::vector<double> power(side / 2, 0.0);
        std::vector<int> count(side / 2, 0);
        for (std::size_t ky = 0; ky < side; ++ky)
            for (std::size_t kx = 0; kx < side; ++kx) {
                const double fy = static_cast<double>(std::min(ky, side - ky));
                const double fx = static_cast<double>(std::min(kx, side - kx));
                const std::size_t bin = static_cast<std::size_t>(std::sqrt(fx * fx + fy * fy));
                if (bin == 0 || bin >= side / 2) continue;
                power[bin] += std::norm(f[ky * side + kx]);
                ++count[bin];
            }
        for (std::size_t bin = 1; bin < side / 2; ++bin)
            if (count[bin]) {
                logf.push_back(std::log(static_cast<double>(bin)));
                logp.push_back(std::log(power[bin] / count[bin]));
            }
    }
    // least-squares slope
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < logf.size(); ++i) {
        mx += logf[i];
        my += logp[i];
    }
    mx /= logf.size();
    my /= logp.size();
    double num = 0, den = 0;
    for (std::size_t i = 0; i < logf.size(); ++i) {
        num += (logf[i] - mx) * (logp[i] - my);
        den += (logf[i] - mx) * (logf[i] - mx);
    }
    const double slope = num / den;
    INFO("slope " << slope);
    CHECK(slope == Approx(-2.0).margin(0.5));
}

TEST_CASE("generate_cohort structure and disjointness") {
    auto brain = vxc::make_brain(10, 16, 1, 0.05, Nonlinearity::identity, 21);
    auto c = vxc::generate_cohort(brain, 12, 5, 8, 4, 22);
    CHECK(c.train_images.shape() == vxc::Shape{12, 1, 16, 16});
    CHECK(c.train_fmri.shape() == vxc::Shape{12, 10});
    CHECK(c.test_images.shape() == vxc::Shape{5, 1, 16, 16});
    CHECK(c.test_fmri_repeats.shape() == vxc::Shape{5, 4, 10});
    CHECK(c.unlabeled_images.shape() == vxc::Shape{8, 1, 16, 16});
    CHECK(c.kept_voxels() == 10);

    std::set<std::uint64_t> hashes;
    const std::size_t stride = 16 * 16;
    for (auto* pool : {&c.train_images, &c.test_images, &c.unlabeled_images})
        for (std::size_t i = 0; i < pool->dim(0); ++i)
            hashes.insert(vxc::fnv1a64_span(pool->data() + i * stride, stride));
    CHECK(hashes.size() == 12 + 5 + 8);
}

TEST_CASE("average_repeats basics and masking commutation") {
    // identical repeats -> that vector; {r, -r} -> zero
    std::vector<float> reps = {1, 2, 1, 2, /* stim 2 */ 3, -4, -3, 4};
    auto t = Tensor<float>::from_vector(reps, {2, 2, 2});
    auto avg = vxc::average_repeats(t);
    CHECK(avg.data()[0] == Approx(1.f));
    CHECK(avg.data()[1] == Approx(2.f));
    CHECK(avg.data()[2] == Approx(0.f));
    CHECK(avg.data()[3] == Approx(0.f));

    // commutes with voxel masking
    auto brain = vxc::make_brain(6, 12, 1, 0.2, Nonlinearity::identity, 31);
    auto c = vxc::generate_cohort(brain, 3, 4, 3, 5, 32);
    c.voxel_mask = {1, 0, 1, 1, 0, 1};
    auto masked_then_avg = vxc::average_repeats(c.masked().test_fmri_repeats);
    auto avg_full = vxc::average_repeats(c.test_fmri_repeats);
    std::size_t w = 0;
    for (std::size_t v = 0; v < 6; ++v) {
        if (!c.voxel_mask[v]) continue;
        for (std::size_t tt = 0; tt < 4; ++tt)
            CHECK(masked_then_avg.data()[tt * 4 + w] == Approx(avg_full.data()[tt * 6 + v]));
        ++w;
    }
}

TEST_CASE("average of m repeats shrinks noise like 1/sqrt(m)") {
    const double sigma = 0.4;
    const std::size_t m = 16;
    auto brain = vxc::make_brain(3, 12, 1, sigma, Nonlinearity::identity, 41);
    auto clean = brain;
    clean.noise_sigma.assign(3, 0.f);
    auto img = vxc::sample_image(12, 1, 42);
    const auto base = vxc::respond(clean, img.data(), 0);

    const int trials = 1000;
    double ss = 0;
    for (int t = 0; t < trials; ++t) {
        std::vector<double> acc(3, 0.0);
        for (std::size_t j = 0; j < m; ++j) {
            const auto r = vxc::respond(brain, img.data(), vxc::mix_seed(43, t, j));
            for (std::size_t v = 0; v < 3; ++v) acc[v] += r[v];
        }
        for (std::size_t v = 0; v < 3; ++v) {
            const double e = acc[v] / m - base[v];
            ss += e * e;
        }
    }
    const double got = std::sqrt(ss / (trials * 3));
    CHECK(got == Approx(sigma / 4.0).epsilon(0.10));
}

TEST_CASE("snr_screen keeps exactly keep_k voxels and ranks signal over noise") {
    // build a repeats tensor directly: voxel 0 pure signal (zero within-stimulus
    // variance), voxel 1 pure noise
    {
        std::vector<float> reps;
        vxc::Rng rng(51);
        for (int t = 0; t < 6; ++t)
            for (int j = 0; j < 4; ++j) {
                reps.push_back(static_cast<float>(t));            // deterministic signal
                reps.push_back(static_cast<float>(rng.normal())); // pure noise
            }
        auto t = Tensor<float>::from_vector(reps, {6, 4, 2});
        auto mask = vxc::snr_screen(t, 1);
        CHECK(mask == std::vector<std::uint8_t>{1, 0});
        auto all = vxc::snr_screen(t, 2);
        CHECK(all == std::vector<std::uint8_t>{1, 1});
        CHECK_THROWS_AS(vxc::snr_screen(t, 3), vxc::ConfigError);
    }

    // Monte-Carlo: strong-signal voxel ranked above pure-noise voxel
    int wins = 0;
    for (int trial = 0; trial < 100; ++trial) {
        vxc::Rng rng(vxc::mix_seed(500, trial));
        const double sig_amp = 1.0, noise_amp = 0.1;
        std::vector<float> reps;
        std::vector<double> stim(8);
        for (auto& s : stim) s = sig_amp * rng.normal();
        for (int t = 0; t < 8; ++t)
            for (int j = 0; j < 5; ++j) {
                reps.push_back(static_cast<float>(stim[t] + noise_amp * rng.normal()));
                reps.push_back(static_cast<float>(noise_amp * rng.normal()));
            }
        auto t = Tensor<float>::from_vector(reps, {8, 5, 2});
        auto mask = vxc::snr_screen(t, 1);
        wins += mask[0] == 1 && mask[1] == 0;
    }
    CHECK(wins >= 99);
}

TEST_CASE("calibrate_noise hits the requested snr") {
    auto brain = vxc::make_brain(12, 16, 1, 0.0, Nonlinearity::identity, 61);
    auto images = vxc::sample_images(200, 16, 1, 62);
    auto sigma = vxc::calibrate_noise(brain, images, 1.0);
    brain.noise_sigma = sigma;

    // empirical check on a fresh ensemble: variance of clean responses over
    // images divided by sigma^2 should be near 1
    auto clean = brain;
    clean.noise_sigma.assign(12, 0.f);
    auto probe = vxc::sample_images(300, 16, 1, 63);
    auto r = vxc::respond_batch(clean, probe, 0);
    double mean_snr = 0;
    for (std::size_t v = 0; v < 12; ++v) {
        double mu = 0;
        for (std::size_t i = 0; i < 300; ++i) mu += r.data()[i * 12 + v];
        mu /= 300;
        double var = 0;
        for (std::size_t i = 0; i < 300; ++i) {
            const double d = r.data()[i * 12 + v] - mu;
            var += d * d;
        }
        var /= 299;
        const double snr = var / (sigma[v] * sigma[v]);
        // per-voxel ratio of two independent sample variances is noisy
        CHECK(snr == Approx(1.0).epsilon(0.5));
        mean_snr += snr;
    }
    CHECK(mean_snr / 12.0 == Approx(1.0).epsilon(0.15));
}

TEST_CASE("test responses carry a per-voxel session transform") {
    // noiseless: repeats are identical and the test block is an exact
    // per-voxel affine image of the clean responses
    auto brain = vxc::make_brain(5, 12, 1, 0.0, vxc::Nonlinearity::identity, 81);
    vxc::SessionDrift drift;
    drift.gain_log_std = 0.3;
    auto c = vxc::generate_cohort(brain, 3, 6, 3, 2, 82, drift);

    const std::size_t stride = 12 * 12;
    for (std::size_t t = 0; t < 6; ++t)
        for (std::size_t v = 0; v < 5; ++v)
            CHECK(c.test_fmri_repeats.data()[(t * 2 + 0) * 5 + v] ==
                  c.test_fmri_repeats.data()[(t * 2 + 1) * 5 + v]);

    bool any_gain = false;
    for (std::size_t v = 0; v < 5; ++v) {
        // recover the gain from two stimuli; it must be consistent across all
        std::vector<double> clean(6), test(6);
        for (std::size_t t = 0; t < 6; ++t) {
            clean[t] = vxc::respond(brain, c.test_images.data() + t * stride, 0)[v];
            test[t] = c.test_fmri_repeats.data()[t * 2 * 5 + v];
        }
        const double g = (test[1] - test[0]) / (clean[1] - clean[0]);
        const double o = test[0] - g * clean[0];
        for (std::size_t t = 2; t < 6; ++t)
            CHECK(test[t] == Approx(g * clean[t] + o).margin(1e-4));
        any_gain |= std::abs(g - 1.0) > 0.01;
        CHECK(o == Approx(0.0).margin(1e-5));  // offset scales with noise sigma, here 0
    }
    CHECK(any_gain);

    // drift can be disabled outright
    vxc::SessionDrift none;
    none.gain_log_std = 0.0;
    none.offset_noise_std = 0.0;
    auto c0 = vxc::generate_cohort(brain, 3, 6, 3, 2, 82, none);
    for (std::size_t t = 0; t < 6; ++t) {
        auto clean = vxc::respond(brain, c0.test_images.data() + t * stride, 0);
        for (std::size_t v = 0; v < 5; ++v)
            CHECK(c0.test_fmri_repeats.data()[t * 2 * 5 + v] == Approx(clean[v]).margin(1e-6));
    }
}

TEST_CASE("softplus nonlinearity is applied") {
    auto brain = vxc::make_brain(4, 12, 1, 0.0, Nonlinearity::softplus, 71);
    std::vector<float> zero(12 * 12, 0.f);
    auto r = vxc::respond(brain, zero.data(), 0);
    for (float v : r) CHECK(v == Approx(std::log(2.0)).margin(1e-5));  // softplus(0)
}
