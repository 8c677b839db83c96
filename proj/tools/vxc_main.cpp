// vxc command-line tool: simulate cohorts, train the encoder/decoder pair,
// reconstruct test stimuli, evaluate reconstructions, and run the full
// ablation ladder.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vxc/vxc.hpp"

namespace fs = std::filesystem;

namespace {

std::string read_text_file(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw vxc::DataError("cannot open: " + path.string());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

vxc::TrainConfig load_config(const std::string& config_path, std::uint64_t seed_override,
                             bool has_seed, const vxc::Cohort* cohort) {
    vxc::TrainConfig cfg;
    if (!config_path.empty()) {
        auto text = read_text_file(config_path);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw vxc::ConfigError(std::string("malformed config JSON: ") + e.what());
        }
        // voxel_count 0 means "derive from the cohort mask"
        if (cohort && j.contains("net") && j["net"].value("voxel_count", 0) == 0)
            j["net"]["voxel_count"] = cohort->masked().voxel_count;
        else if (cohort && !j.contains("net"))
            j["net"] = {{"voxel_count", cohort->masked().voxel_count}};
        cfg = vxc::parse_train_config(j);
    } else if (cohort) {
        cfg.net.voxel_count = cohort->masked().voxel_count;
    }
    if (has_seed) cfg.seed = seed_override;
    if (cohort) {
        const auto masked = cohort->masked();
        if (cfg.net.voxel_count != masked.voxel_count)
            throw vxc::ConfigError("config voxel_count " + std::to_string(cfg.net.voxel_count) +
                                   " does not match cohort kept voxels " +
                                   std::to_string(masked.voxel_count));
        if (cfg.net.image_side != masked.image_side || cfg.net.channels != masked.channels)
            throw vxc::ConfigError("config image geometry does not match the cohort");
    }
    cfg.validate();
    return cfg;
}

void write_recon_images(const fs::path& dir, const vxc::Tensor<float>& recons) {
    const std::size_t T = recons.dim(0), C = recons.dim(1), H = recons.dim(2), W = recons.dim(3);
    const char* ext = C == 1 ? ".pgm" : ".ppm";
    char name[64];
    for (std::size_t t = 0; t < T; ++t) {
        std::snprintf(name, sizeof name, "recon_%03zu%s", t, ext);
        vxc::write_pnm(dir / name, recons.data() + t * C * H * W, C, H, W);
    }
}

std::vector<std::uint64_t> parse_u64_list(const std::string& csv) {
    std::vector<std::uint64_t> out;
    std::size_t pos = 0;
    while (pos < csv.size()) {
        const auto comma = csv.find(',', pos);
        const auto tok =
            csv.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (!tok.empty()) out.push_back(std::stoull(tok));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"encoder-decoder stimulus reconstruction from simulated voxel responses"};
    app.require_subcommand(1);

    // ---- simulate ----
    auto* sim = app.add_subcommand("simulate", "generate a synthetic cohort directory");
    std::string sim_out;
    std::size_t sim_side = 32, sim_channels = 1, sim_voxels = 256, sim_train = 300,
                sim_test = 50, sim_unlabeled = 2000, sim_repeats = 16, sim_keep = 0;
    double sim_sigma = 0.0, sim_snr = 0.0;
    std::string sim_nonlin = "identity";
    std::uint64_t sim_seed = 7;
    std::string sim_train_dir, sim_test_dir, sim_unlabeled_dir;
    sim->add_option("--out", sim_out, "output cohort directory")->required();
    sim->add_option("--side", sim_side, "image side length");
    sim->add_option("--channels", sim_channels, "1 (grayscale) or 3 (rgb)");
    sim->add_option("--voxels", sim_voxels, "number of simulated voxels");
    sim->add_option("--train", sim_train, "labeled train pairs");
    sim->add_option("--test", sim_test, "test stimuli");
    sim->add_option("--unlabeled", sim_unlabeled, "unlabeled image pool size");
    sim->add_option("--repeats", sim_repeats, "measurements per test stimulus");
    sim->add_option("--sigma", sim_sigma, "per-voxel noise sigma (ignored when --snr is set)");
    sim->add_option("--snr", sim_snr, "calibrate noise to this per-voxel SNR");
    sim->add_option("--keep", sim_keep, "keep top-k voxels by SNR screening (0 = keep all)");
    sim->add_option("--nonlinearity", sim_nonlin, "identity | softplus");
    sim->add_option("--seed", sim_seed, "generation seed");
    vxc::SessionDrift sim_drift;
    sim->add_option("--session-gain-std", sim_drift.gain_log_std,
                    "log-std of the per-voxel test-session gain");
    sim->add_option("--session-offset-std", sim_drift.offset_noise_std,
                    "per-voxel test-session offset, in units of the voxel noise sigma");
    double sim_response_scale = 0.05;
    sim->add_option("--response-scale", sim_response_scale,
                    "standardize per-voxel signal std to this value (0 disables)");
    sim->add_option("--train-images", sim_train_dir, "PGM/PPM directory replacing the train pool");
    sim->add_option("--test-images", sim_test_dir, "PGM/PPM directory replacing the test pool");
    sim->add_option("--unlabeled-images", sim_unlabeled_dir,
                    "PGM/PPM directory replacing the unlabeled pool");

    // ---- train ----
    auto* train = app.add_subcommand("train", "run training phases 1 and 2");
    std::string tr_cohort, tr_config, tr_out, tr_ablation = "d", tr_encoder, tr_resume;
    std::uint64_t tr_seed = 0;
    bool tr_has_seed = false;
    std::vector<std::size_t> tr_exclude;
    train->add_option("--cohort", tr_cohort, "cohort directory")->required();
    train->add_option("--config", tr_config, "training config JSON");
    train->add_option("--out", tr_out, "output directory for checkpoints")->required();
    train->add_option("--ablation", tr_ablation, "b | c | d | e (default d, the full method)");
    train->add_option("--seed", tr_seed, "training seed override")
        ->each([&](const std::string&) { tr_has_seed = true; });
    train->add_option("--exclude", tr_exclude,
                      "test indices excluded from the D-E pool (ablation e)");
    train->add_option("--encoder", tr_encoder, "reuse a phase-1 checkpoint instead of training");
    train->add_option("--resume", tr_resume, "resume phase 2 from a checkpoint");

    // ---- reconstruct ----
    auto* rec = app.add_subcommand("reconstruct", "decode test responses from a checkpoint");
    std::string rc_ckpt, rc_cohort, rc_out;
    bool rc_single_trial = false;
    rec->add_option("--checkpoint", rc_ckpt, "phase-2 checkpoint")->required();
    rec->add_option("--cohort", rc_cohort, "cohort directory")->required();
    rec->add_option("--out", rc_out, "output directory")->required();
    rec->add_flag("--single-trial", rc_single_trial,
                  "decode the first repeat instead of the repeat average");

    // ---- evaluate ----
    auto* ev = app.add_subcommand("evaluate", "n-way identification of reconstructions");
    std::string ev_recons, ev_cohort, ev_out = "report";
    std::string ev_nlist = "2,5,10";
    std::size_t ev_draws = 1000, ev_resamples = 2000;
    std::uint64_t ev_seed = 424242;
    ev->add_option("--recons", ev_recons, "recons.vxc stack or its directory")->required();
    ev->add_option("--cohort", ev_cohort, "cohort directory with ground-truth test images")
        ->required();
    ev->add_option("--out", ev_out, "output prefix (writes .json and .csv)");
    ev->add_option("--n", ev_nlist, "comma-separated candidate counts");
    ev->add_option("--draws", ev_draws, "monte-carlo draws per image for n > 2");
    ev->add_option("--resamples", ev_resamples, "bootstrap resamples");
    ev->add_option("--seed", ev_seed, "evaluation seed");

    // ---- ablate ----
    auto* ab = app.add_subcommand("ablate", "train and evaluate the full ablation ladder");
    std::string ab_cohort, ab_config, ab_out, ab_seeds = "1,2,3,4,5";
    std::size_t ab_groups = 5, ab_jobs = 1, ab_draws = 1000, ab_resamples = 2000;
    std::uint64_t ab_eval_seed = 424242;
    ab->add_option("--cohort", ab_cohort, "cohort directory")->required();
    ab->add_option("--config", ab_config, "training config JSON");
    ab->add_option("--out", ab_out, "output directory")->required();
    ab->add_option("--seeds", ab_seeds, "comma-separated training seeds");
    ab->add_option("--groups", ab_groups, "exclusion groups for configuration (e)");
    ab->add_option("--jobs", ab_jobs, "parallel seeds (results independent of this)");
    ab->add_option("--draws", ab_draws, "monte-carlo draws per image for n > 2");
    ab->add_option("--resamples", ab_resamples, "bootstrap resamples");
    ab->add_option("--eval-seed", ab_eval_seed, "evaluation seed");

    CLI11_PARSE(app, argc, argv);

    if (sim->parsed()) {
        auto brain = vxc::make_brain(sim_voxels, sim_side, sim_channels, sim_sigma,
                                     vxc::nonlinearity_from_string(sim_nonlin), sim_seed);
        if (sim_response_scale > 0.0 || sim_snr > 0.0) {
            auto cal = vxc::sample_images(400, sim_side, sim_channels,
                                          vxc::mix_seed(sim_seed, vxc::Stream::calibration));
            if (sim_response_scale > 0.0)
                vxc::standardize_response_scale(brain, cal, sim_response_scale);
            if (sim_snr > 0.0) brain.noise_sigma = vxc::calibrate_noise(brain, cal, sim_snr);
        }
        vxc::Cohort cohort;
        if (!sim_train_dir.empty() || !sim_test_dir.empty() || !sim_unlabeled_dir.empty()) {
            auto pool = [&](const std::string& dir, std::size_t n, std::size_t offset) {
                if (!dir.empty()) return vxc::read_pnm_dir(dir, sim_channels, sim_side);
                std::vector<float> v;
                const std::size_t stride = sim_channels * sim_side * sim_side;
                v.reserve(n * stride);
                for (std::size_t i = 0; i < n; ++i) {
                    auto img = vxc::sample_image(
                        sim_side, sim_channels,
                        vxc::mix_seed(sim_seed, vxc::Stream::image_pool, offset + i));
                    v.insert(v.end(), img.begin(), img.end());
                }
                return vxc::Tensor<float>::from_vector(std::move(v),
                                                       {n, sim_channels, sim_side, sim_side});
            };
            cohort = vxc::generate_cohort_from_pools(
                brain, pool(sim_train_dir, sim_train, 0), pool(sim_test_dir, sim_test, sim_train),
                pool(sim_unlabeled_dir, sim_unlabeled, sim_train + sim_test), sim_repeats,
                sim_seed, sim_drift);
        } else {
            cohort = vxc::generate_cohort(brain, sim_train, sim_test, sim_unlabeled, sim_repeats,
                                          sim_seed, sim_drift);
        }
        if (sim_keep > 0 && sim_keep < cohort.voxel_count)
            cohort.voxel_mask = vxc::snr_screen(cohort.test_fmri_repeats, sim_keep);
        vxc::save_cohort(sim_out, cohort);
        std::fprintf(stderr,
                     "wrote cohort to %s (%zu train, %zu test x %zu repeats, %zu voxels kept)\n",
                     sim_out.c_str(), cohort.n_train(), cohort.n_test(), cohort.repeats,
                     cohort.kept_voxels());
        return 0;
    }

    if (train->parsed()) {
        auto cohort = vxc::load_cohort(tr_cohort);
        auto cfg = load_config(tr_config, tr_seed, tr_has_seed, &cohort);
        if (tr_ablation == "b") {
            cfg.phase2.enable_ed = false;
            cfg.phase2.enable_de = false;
        } else if (tr_ablation == "c") {
            cfg.phase2.enable_ed = true;
            cfg.phase2.enable_de = false;
        } else if (tr_ablation == "d") {
            cfg.phase2.enable_ed = true;
            cfg.phase2.enable_de = true;
        } else if (tr_ablation == "e") {
            cfg.phase2.enable_ed = true;
            cfg.phase2.enable_de = true;
            if (tr_exclude.empty())
                throw vxc::ConfigError("ablation e needs --exclude with at least one test index");
        } else {
            throw vxc::ConfigError("unknown ablation configuration: " + tr_ablation);
        }
        if (!tr_exclude.empty()) cfg.phase2.exclude_test_indices = tr_exclude;
        const std::string text = vxc::canonical_config_text(cfg);
        fs::create_directories(tr_out);
        {
            std::ofstream os(fs::path(tr_out) / "config.json");
            os << vxc::train_config_to_json(cfg).dump(2) << "\n";
        }

        vxc::EncoderParams<float> encoder;
        if (!tr_encoder.empty()) {
            auto ck = vxc::load_checkpoint(tr_encoder);
            vxc::EncoderTrainer t(cohort, cfg);
            t.load_state(ck, text);
            encoder = t.finish();
            std::fprintf(stderr, "loaded phase-1 encoder from %s\n", tr_encoder.c_str());
        } else {
            vxc::EncoderTrainer t(cohort, cfg);
            for (int e = 0; e < cfg.phase1.epochs; ++e) {
                t.run_epoch();
                std::fprintf(stderr, "[phase1] epoch %d/%d loss %.6f\n", t.epoch(),
                             cfg.phase1.epochs, t.last_epoch_loss());
            }
            vxc::save_checkpoint(fs::path(tr_out) / "phase1.ckpt", t.make_checkpoint(text));
            encoder = t.finish();
            const auto masked = cohort.masked();
            const double corr = vxc::encoder_voxel_correlation(
                encoder, masked.test_images, vxc::average_repeats(masked.test_fmri_repeats));
            std::fprintf(stderr, "[phase1] held-out mean voxel correlation %.4f\n", corr);
        }

        vxc::DecoderTrainer t(cohort, encoder, cfg);
        if (!tr_resume.empty()) {
            auto ck = vxc::load_checkpoint(tr_resume);
            t.load_state(ck, text);
            std::fprintf(stderr, "resumed phase 2 at epoch %d\n", t.epoch());
        }
        while (t.epoch() < cfg.phase2.epochs) {
            t.run_epoch();
            std::fprintf(stderr, "[phase2] epoch %d/%d loss %.6f\n", t.epoch(), cfg.phase2.epochs,
                         t.last_epoch_loss());
        }
        vxc::save_checkpoint(fs::path(tr_out) / "phase2.ckpt", t.make_checkpoint(text));
        std::fprintf(stderr, "wrote %s\n", (fs::path(tr_out) / "phase2.ckpt").string().c_str());
        return 0;
    }

    if (rec->parsed()) {
        auto ck = vxc::load_checkpoint(rc_ckpt);
        if (ck.phase != 2) throw vxc::ConfigError("reconstruct needs a phase-2 checkpoint");
        auto cfg = vxc::parse_train_config_text(ck.config_text);
        auto cohort = vxc::load_cohort(rc_cohort);
        const auto masked = cohort.masked();
        if (cfg.net.voxel_count != masked.voxel_count)
            throw vxc::ConfigError("checkpoint voxel_count does not match the cohort");

        // rebuild nets from the embedded config and restore parameters
        vxc::EncoderTrainer et(cohort, cfg);
        vxc::DecoderTrainer dt(cohort, et.finish(), cfg);
        dt.load_state(ck, ck.config_text);
        auto dec = dt.finish();

        vxc::Tensor<float> responses;
        if (rc_single_trial) {
            const std::size_t T = masked.n_test(), m = masked.repeats, V = masked.voxel_count;
            std::vector<float> first(T * V);
            for (std::size_t t = 0; t < T; ++t)
                std::copy(masked.test_fmri_repeats.data() + t * m * V,
                          masked.test_fmri_repeats.data() + t * m * V + V, first.begin() + t * V);
            responses = vxc::Tensor<float>::from_vector(std::move(first), {T, V});
        } else {
            responses = vxc::average_repeats(masked.test_fmri_repeats);
        }
        auto recons = vxc::reconstruct(dec, responses);
        fs::create_directories(rc_out);
        vxc::save_array(fs::path(rc_out) / "recons.vxc", recons);
        write_recon_images(rc_out, recons);
        std::fprintf(stderr, "wrote %zu reconstructions to %s\n", recons.dim(0), rc_out.c_str());
        return 0;
    }

    if (ev->parsed()) {
        fs::path rp(ev_recons);
        if (fs::is_directory(rp)) rp /= "recons.vxc";
        auto recons = vxc::load_array(rp);
        auto cohort = vxc::load_cohort(ev_cohort);
        if (recons.shape() != cohort.test_images.shape())
            throw vxc::DataError("reconstruction stack does not match the cohort test images");
        std::vector<std::size_t> n_list;
        for (auto v : parse_u64_list(ev_nlist)) n_list.push_back(static_cast<std::size_t>(v));
        auto rep = vxc::evaluate_reconstructions(recons, cohort.test_images, n_list, ev_draws,
                                                 ev_resamples, ev_seed);
        rep.write_csv(ev_out + ".csv");
        {
            std::ofstream os(ev_out + ".json");
            os << rep.to_json().dump(2) << "\n";
        }
        for (std::size_t k = 0; k < rep.results.size(); ++k)
            std::printf("n=%zu accuracy %.4f ci95 [%.4f, %.4f]\n", rep.results[k].n,
                        rep.results[k].mean_accuracy, rep.cis[k].first, rep.cis[k].second);
        return 0;
    }

    if (ab->parsed()) {
        auto cohort = vxc::load_cohort(ab_cohort);
        auto cfg = load_config(ab_config, 0, false, &cohort);
        vxc::AblationOptions opt;
        opt.seeds = parse_u64_list(ab_seeds);
        opt.exclusion_groups = ab_groups;
        opt.jobs = ab_jobs;
        opt.mc_draws = ab_draws;
        opt.bootstrap_resamples = ab_resamples;
        opt.eval_seed = ab_eval_seed;
        opt.verbose = true;
        auto rep = vxc::run_ablation(cohort, cfg, opt);
        fs::create_directories(ab_out);
        {
            std::ofstream os(fs::path(ab_out) / "ladder.json");
            os << rep.to_json().dump(2) << "\n";
        }
        rep.write_csv(fs::path(ab_out) / "ladder.csv");
        for (const auto& c : rep.configs) {
            std::printf("%-26s", c.name.c_str());
            for (std::size_t k = 0; k < rep.n_list.size(); ++k)
                std::printf("  n=%zu %.4f [%.4f, %.4f]", rep.n_list[k], c.mean_accuracy[k],
                            c.ci[k].first, c.ci[k].second);
            std::printf("\n");
        }
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const vxc::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const vxc::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
