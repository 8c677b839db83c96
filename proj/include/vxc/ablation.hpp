#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <string>
#include <thread>
#include <vector>

#include "vxc/config.hpp"
#include "vxc/eval.hpp"
#include "vxc/trainer.hpp"

namespace vxc {

// Ladder of the four training configurations: supervised-only, plus
// unlabeled images, the full method, and the full method with the target
// responses excluded from the D-E pool.
struct AblationOptions {
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    // Configuration (e) trains one decoder per exclusion group; each test
    // stimulus is reconstructed by the decoder that never saw its response.
    // Setting this to n_test reproduces exact per-target leave-one-out.
    std::size_t exclusion_groups = 5;
    std::vector<std::size_t> n_list = {2, 5, 10};
    std::size_t mc_draws = 1000;
    std::size_t bootstrap_resamples = 2000;
    std::uint64_t eval_seed = 424242;
    std::size_t jobs = 1;
    bool verbose = false;
};

struct LadderConfigResult {
    std::string name;
    bool enable_ed = false;
    bool enable_de = false;
    bool exclude_target = false;
    std::vector<std::vector<double>> per_seed_accuracy;  // [seed][n_idx]
    std::vector<std::vector<double>> per_image_mean;     // [n_idx][image], over seeds
    std::vector<double> mean_accuracy;                   // [n_idx], over seeds
    std::vector<std::pair<double, double>> ci;           // [n_idx]
};

struct LadderReport {
    std::vector<std::size_t> n_list;
    std::vector<std::uint64_t> seeds;
    std::vector<std::uint64_t> encoder_checksums;  // one per seed
    std::vector<LadderConfigResult> configs;       // b, c, d, e
    std::uint64_t config_hash = 0;
    std::size_t n_images = 0;

    const LadderConfigResult& by_name(const std::string& name) const {
        for (const auto& c : configs)
            if (c.name == name) return c;
        throw ConfigError("LadderReport: no configuration named " + name);
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["n_list"] = n_list;
        j["seeds"] = seeds;
        j["n_runs"] = seeds.size();
        j["n_images"] = n_images;
        j["config_hash"] = config_hash;
        j["encoder_checksums"] = encoder_checksums;
        nlohmann::json cs = nlohmann::json::array();
        for (const auto& c : configs) {
            nlohmann::json e;
            e["name"] = c.name;
            e["enable_ed"] = c.enable_ed;
            e["enable_de"] = c.enable_de;
            e["exclude_target"] = c.exclude_target;
            nlohmann::json acc = nlohmann::json::object(), ci = nlohmann::json::object(),
                           per_seed = nlohmann::json::object();
            for (std::size_t k = 0; k < n_list.size(); ++k) {
                const std::string key = std::to_string(n_list[k]);
                acc[key] = c.mean_accuracy[k];
                ci[key] = {c.ci[k].first, c.ci[k].second};
                nlohmann::json arr = nlohmann::json::array();
                for (const auto& row : c.per_seed_accuracy) arr.push_back(row[k]);
                per_seed[key] = arr;
            }
            e["accuracy"] = acc;
            e["ci95"] = ci;
            e["per_seed"] = per_seed;
            cs.push_back(e);
        }
        j["configs"] = cs;
        return j;
    }

    void write_csv(const std::filesystem::path& path) const {
        std::ofstream os(path);
        if (!os) throw DataError("cannot open for writing: " + path.string());
        os << "config,image";
        for (std::size_t n : n_list) os << ",acc_n" << n;
        os << "\n";
        char buf[64];
        for (const auto& c : configs)
            for (std::size_t i = 0; i < n_images; ++i) {
                os << c.name << "," << i;
                for (std::size_t k = 0; k < n_list.size(); ++k) {
                    std::snprintf(buf, sizeof buf, "%.17g", c.per_image_mean[k][i]);
                    os << "," << buf;
                }
                os << "\n";
            }
    }
};

namespace detail {

struct LadderSpec {
    std::string name;
    bool enable_ed, enable_de, exclude_target;
};

inline const std::vector<LadderSpec>& ladder_specs() {
    static const std::vector<LadderSpec> specs = {
        {"b_supervised", false, false, false},
        {"c_plus_unlabeled_images", true, false, false},
        {"d_full", true, true, false},
        {"e_full_minus_target", true, true, true},
    };
    return specs;
}

}  // namespace detail

// Trains and evaluates the four ladder configurations with matched seeds:
// every configuration within a seed shares the same phase-1 encoder and the
// same decoder initialization.
inline LadderReport run_ablation(const Cohort& cohort, const TrainConfig& base,
                                 const AblationOptions& opt) {
    if (opt.seeds.empty()) throw ConfigError("run_ablation: need at least one seed");
    if (opt.exclusion_groups < 1)
        throw ConfigError("run_ablation: exclusion_groups must be >= 1");
    const Cohort masked = cohort.masked();
    const std::size_t T = masked.n_test();
    const auto& specs = detail::ladder_specs();

    // per seed, per config, per n
    struct SeedOut {
        std::uint64_t encoder_checksum = 0;
        std::vector<std::vector<IdentificationResult>> results;
    };
    std::vector<SeedOut> outs(opt.seeds.size());

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t k = next.fetch_add(1);
            if (k >= opt.seeds.size()) return;
            const auto t0 = std::chrono::steady_clock::now();

            TrainConfig cfg = base;
            cfg.seed = opt.seeds[k];
            auto encoder = train_encoder(masked, cfg);
            outs[k].encoder_checksum = encoder.params.checksum();

            auto avg_fmri = average_repeats(masked.test_fmri_repeats);
            outs[k].results.resize(specs.size());
            for (std::size_t s = 0; s < specs.size(); ++s) {
                const auto& spec = specs[s];
                Tensor<float> recons;
                if (!spec.exclude_target) {
                    TrainConfig c2 = cfg;
                    c2.phase2.enable_ed = spec.enable_ed;
                    c2.phase2.enable_de = spec.enable_de;
                    c2.phase2.exclude_test_indices.clear();
                    auto dec = train_decoder(masked, encoder, c2);
                    recons = reconstruct(dec, avg_fmri);
                } else {
                    // group-wise leave-out: stimulus t is reconstructed by the
                    // decoder whose D-E pool excluded group (t mod G)
                    const std::size_t G = std::min(opt.exclusion_groups, T);
                    std::vector<float> combined(T * masked.channels * masked.image_side *
                                                masked.image_side);
                    const std::size_t img_numel =
                        masked.channels * masked.image_side * masked.image_side;
                    for (std::size_t g = 0; g < G; ++g) {
                        TrainConfig c2 = cfg;
                        c2.phase2.enable_ed = spec.enable_ed;
                        c2.phase2.enable_de = spec.enable_de;
                        c2.phase2.exclude_test_indices.clear();
                        std::vector<std::size_t> group;
                        for (std::size_t t = 0; t < T; ++t)
                            if (t % G == g) {
                                c2.phase2.exclude_test_indices.push_back(t);
                                group.push_back(t);
                            }
                        auto dec = train_decoder(masked, encoder, c2);
                        auto rows = detail::gather_rows(avg_fmri, group);
                        auto rec = reconstruct(dec, rows);
                        for (std::size_t i = 0; i < group.size(); ++i)
                            std::copy(rec.data() + i * img_numel, rec.data() + (i + 1) * img_numel,
                                      combined.begin() + group[i] * img_numel);
                    }
                    recons = Tensor<float>::from_vector(
                        std::move(combined),
                        {T, masked.channels, masked.image_side, masked.image_side});
                }

                for (std::size_t ni = 0; ni < opt.n_list.size(); ++ni) {
                    const std::size_t n = opt.n_list[ni];
                    const IdMode mode = n == 2 ? IdMode::exhaustive : IdMode::montecarlo;
                    outs[k].results[s].push_back(identification_accuracy(
                        recons, masked.test_images, n, mode, opt.mc_draws, opt.eval_seed));
                }
            }
            if (opt.verbose) {
                const auto dt = std::chrono::duration_cast<std::chrono::seconds>(
                                    std::chrono::steady_clock::now() - t0)
                                    .count();
                std::fprintf(stderr, "[ablate] seed %llu done in %llds\n",
                             static_cast<unsigned long long>(opt.seeds[k]),
                             static_cast<long long>(dt));
            }
        }
    };

    const std::size_t jobs = std::max<std::size_t>(1, std::min(opt.jobs, opt.seeds.size()));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < jobs; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    LadderReport rep;
    rep.n_list = opt.n_list;
    rep.seeds = opt.seeds;
    rep.config_hash = config_hash(base);
    rep.n_images = T;
    for (const auto& o : outs) rep.encoder_checksums.push_back(o.encoder_checksum);
    for (std::size_t s = 0; s < specs.size(); ++s) {
        LadderConfigResult c;
        c.name = specs[s].name;
        c.enable_ed = specs[s].enable_ed;
        c.enable_de = specs[s].enable_de;
        c.exclude_target = specs[s].exclude_target;
        c.per_seed_accuracy.resize(opt.seeds.size());
        c.per_image_mean.assign(opt.n_list.size(), std::vector<double>(T, 0.0));
        for (std::size_t k = 0; k < opt.seeds.size(); ++k) {
            for (std::size_t ni = 0; ni < opt.n_list.size(); ++ni) {
                const auto& r = outs[k].results[s][ni];
                c.per_seed_accuracy[k].push_back(r.mean_accuracy);
                for (std::size_t i = 0; i < T; ++i)
                    c.per_image_mean[ni][i] += r.per_image[i].accuracy;
            }
        }
        for (std::size_t ni = 0; ni < opt.n_list.size(); ++ni) {
            double acc = 0;
            for (std::size_t k = 0; k < opt.seeds.size(); ++k)
                acc += c.per_seed_accuracy[k][ni];
            c.mean_accuracy.push_back(acc / static_cast<double>(opt.seeds.size()));
            for (auto& v : c.per_image_mean[ni]) v /= static_cast<double>(opt.seeds.size());
            c.ci.push_back(bootstrap_ci(c.per_image_mean[ni], 0.95, opt.bootstrap_resamples,
                                        mix_seed(opt.eval_seed, 77, s, ni)));
        }
        rep.configs.push_back(std::move(c));
    }
    return rep;
}

}  // namespace vxc
