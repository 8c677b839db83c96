#include <catch2/catch.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "support/oracles.hpp"
#include "vxc/eval.hpp"

namespace fs = std::filesystem;
using vxc::Tensor;

namespace {

Tensor<float> random_stack(std::size_t n, std::size_t side, std::uint64_t seed) {
    vxc::Rng rng(seed);
    std::vector<float> v(n * 1 * side * side);
    for (auto& x : v) x = static_cast<float>(rng.uniform());
    return Tensor<float>::from_vector(std::move(v), {n, 1, side, side});
}

}  // namespace

TEST_CASE("pearson basics") {
    std::vector<float> a = {1, 2, 3};
    std::vector<float> b = {1, 2, 4};
    CHECK(vxc::pearson(a, a) == Approx(1.0));
    std::vector<float> neg = {-1, -2, -3};
    CHECK(vxc::pearson(a, neg) == Approx(-1.0));
    CHECK(vxc::pearson(a, b) == Approx(0.9819805060619659).margin(1e-10));

    vxc::counters::pearson_constant_warnings().store(0);
    std::vector<float> c = {2, 2, 2};
    CHECK(vxc::pearson(a, c) == 0.0);
    CHECK(vxc::counters::pearson_constant_warnings().load() == 1);
}

TEST_CASE("pearson matches the closed-form oracle on 1000 random pairs") {
    vxc::Rng rng(17);
    double worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 8 + static_cast<std::size_t>(rng.uniform_int(0, 56));
        std::vector<float> a(n), b(n);
        std::vector<double> ad(n), bd(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = static_cast<float>(rng.normal());
            b[i] = static_cast<float>(0.3 * rng.normal() + 0.2 * a[i]);
            ad[i] = a[i];
            bd[i] = b[i];
        }
        const double got = vxc::pearson(a, b);
        const double want = static_cast<double>(vxc_test::pearson_oracle(ad, bd));
        worst = std::max(worst, std::fabs(got - want));
    }
    CHECK(worst < 1e-10);
}

TEST_CASE("identify_nway correctness and tie handling") {
    auto gt = random_stack(1, 6, 21);
    auto d1 = random_stack(1, 6, 22);
    auto d2 = random_stack(1, 6, 23);

    // exact reconstruction always wins
    CHECK(vxc::identify_nway(gt, gt, {d1, d2}, 3));
    // reconstruction equal to a distractor loses (tie or better for it)
    CHECK_FALSE(vxc::identify_nway(d1, gt, {d1, d2}, 3));

    CHECK_THROWS_AS(vxc::identify_nway(gt, gt, {d1}, 3), vxc::ConfigError);
    CHECK_THROWS_AS(vxc::identify_nway(gt, gt, {gt, d2}, 3), vxc::ConfigError);
}

TEST_CASE("identify_nway is invariant under positive affine rescaling") {
    auto gt = random_stack(1, 8, 31);
    auto recon = random_stack(1, 8, 32);
    std::vector<Tensor<float>> distractors;
    for (int i = 0; i < 4; ++i) distractors.push_back(random_stack(1, 8, 33 + i));
    const bool base = vxc::identify_nway(recon, gt, distractors, 5);
    for (float a : {0.5f, 2.f, 10.f})
        for (float b : {-0.3f, 0.f, 0.7f}) {
            std::vector<float> scaled(recon.numel());
            for (std::size_t i = 0; i < recon.numel(); ++i)
                scaled[i] = a * recon.data()[i] + b;
            auto r2 = Tensor<float>::from_vector(scaled, recon.shape());
            CHECK(vxc::identify_nway(r2, gt, distractors, 5) == base);
        }
}

TEST_CASE("noisy reconstruction identified among random distractors") {
    // recon = gt + small noise vs 9 independent distractors (10-way)
    int correct = 0;
    for (int trial = 0; trial < 100; ++trial) {
        auto gt = random_stack(1, 8, 1000 + trial);
        vxc::Rng rng(2000 + trial);
        std::vector<float> noisy(gt.numel());
        for (std::size_t i = 0; i < gt.numel(); ++i)
            noisy[i] = gt.data()[i] + 0.01f * static_cast<float>(rng.normal());
        auto recon = Tensor<float>::from_vector(noisy, gt.shape());
        std::vector<Tensor<float>> distractors;
        for (int d = 0; d < 9; ++d) distractors.push_back(random_stack(1, 8, 3000 + trial * 9 + d));
        correct += vxc::identify_nway(recon, gt, distractors, 10);
    }
    CHECK(correct >= 99);
}

TEST_CASE("identification accuracy at the extremes") {
    auto gts = random_stack(12, 8, 41);
    // perfect reconstructions: accuracy 1 at every n
    for (std::size_t n : {std::size_t{2}, std::size_t{5}, std::size_t{10}}) {
        const auto mode = n == 2 ? vxc::IdMode::exhaustive : vxc::IdMode::montecarlo;
        auto r = vxc::identification_accuracy(gts, gts, n, mode, 200, 5);
        CHECK(r.mean_accuracy == 1.0);
    }

    // independent reconstructions: near chance at n = 2
    auto noise = random_stack(50, 8, 42);
    auto gts50 = random_stack(50, 8, 43);
    auto r = vxc::identification_accuracy(noise, gts50, 2, vxc::IdMode::exhaustive, 0, 7);
    // null std of the mean rank-based accuracy over 50 images is ~0.042
    CHECK(std::fabs(r.mean_accuracy - 0.5) < 3 * 0.042);

    CHECK_THROWS_AS(vxc::identification_accuracy(noise, gts50, 51, vxc::IdMode::montecarlo, 10, 1),
                    vxc::ConfigError);
    CHECK_THROWS_AS(vxc::identification_accuracy(noise, gts50, 5, vxc::IdMode::exhaustive, 0, 1),
                    vxc::ConfigError);
}

TEST_CASE("exhaustive n=2 equals montecarlo in the all-pairs limit") {
    auto recons = random_stack(8, 6, 51);
    auto gts = random_stack(8, 6, 52);
    auto ex = vxc::identification_accuracy(recons, gts, 2, vxc::IdMode::exhaustive, 0, 9);
    auto mc = vxc::identification_accuracy(recons, gts, 2, vxc::IdMode::montecarlo, 4000, 9);
    CHECK(mc.mean_accuracy == Approx(ex.mean_accuracy).margin(0.03));

    // determinism of the exhaustive path
    auto ex2 = vxc::identification_accuracy(recons, gts, 2, vxc::IdMode::exhaustive, 0, 1234);
    CHECK(ex2.mean_accuracy == ex.mean_accuracy);
}

TEST_CASE("bootstrap confidence intervals") {
    std::vector<double> all_correct(30, 1.0);
    auto [lo, hi] = vxc::bootstrap_ci(all_correct, 0.95, 1000, 3);
    CHECK(lo == 1.0);
    CHECK(hi == 1.0);

    vxc::Rng rng(5);
    std::vector<double> mixed(40);
    for (auto& v : mixed) v = rng.uniform() < 0.7 ? 1.0 : 0.0;
    double point = 0;
    for (double v : mixed) point += v;
    point /= mixed.size();
    auto [l2, h2] = vxc::bootstrap_ci(mixed, 0.95, 2000, 4);
    CHECK(l2 <= point);
    CHECK(point <= h2);

    // width shrinks with sample size like 1/sqrt(N)
    double prev_width = 1e9;
    for (std::size_t N : {25, 100, 400}) {
        std::vector<double> vals(N);
        vxc::Rng r2(N);
        for (auto& v : vals) v = r2.uniform() < 0.5 ? 1.0 : 0.0;
        auto [l, h] = vxc::bootstrap_ci(vals, 0.95, 2000, 6);
        CHECK(h - l < prev_width);
        prev_width = h - l;
    }

    CHECK_THROWS_AS(vxc::bootstrap_ci(all_correct, 0.95, 100, 1), vxc::ConfigError);
    CHECK_THROWS_AS(vxc::bootstrap_ci({1.0}, 0.95, 1000, 1), vxc::ConfigError);
}

TEST_CASE("eval report aggregates are recomputable from the per-image matrix") {
    auto recons = random_stack(10, 8, 61);
    auto gts = random_stack(10, 8, 62);
    auto rep = vxc::evaluate_reconstructions(recons, gts, {2, 5}, 300, 1000, 77, 123456);
    CHECK(rep.n_images == 10);
    REQUIRE(rep.results.size() == 2);
    for (std::size_t k = 0; k < rep.results.size(); ++k) {
        const auto& r = rep.results[k];
        double mean = 0;
        for (const auto& pi : r.per_image) mean += pi.accuracy;
        mean /= r.per_image.size();
        CHECK(mean == Approx(r.mean_accuracy).margin(1e-12));
        CHECK(rep.cis[k].first <= r.mean_accuracy);
        CHECK(r.mean_accuracy <= rep.cis[k].second);
    }

    auto j = rep.to_json();
    CHECK(j.at("accuracy").contains("2"));
    CHECK(j.at("config_hash").get<std::uint64_t>() == 123456);

    const auto dir = fs::temp_directory_path() / "vxc_eval_report";
    fs::create_directories(dir);
    rep.write_csv(dir / "per_image.csv");
    std::ifstream is(dir / "per_image.csv");
    std::string header;
    std::getline(is, header);
    CHECK(header == "image,acc_n2,correct_n2,comparisons_n2,acc_n5,correct_n5,comparisons_n5");
    std::size_t rows = 0;
    std::string line;
    double acc_sum = 0;
    while (std::getline(is, line)) {
        ++rows;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        std::getline(ss, cell, ',');
        acc_sum += std::stod(cell);
    }
    CHECK(rows == 10);
    CHECK(acc_sum / 10.0 == Approx(rep.results[0].mean_accuracy).margin(1e-12));
    fs::remove_all(dir);
}

TEST_CASE("identical runs produce byte-identical reports") {
    auto recons = random_stack(8, 8, 71);
    auto gts = random_stack(8, 8, 72);
    auto a = vxc::evaluate_reconstructions(recons, gts, {2, 5}, 200, 1000, 5, 1);
    auto b = vxc::evaluate_reconstructions(recons, gts, {2, 5}, 200, 1000, 5, 1);
    CHECK(a.to_json().dump() == b.to_json().dump());
}
