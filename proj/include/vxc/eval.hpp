#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vxc/counters.hpp"
#include "vxc/nets.hpp"
#include "vxc/rng.hpp"
#include "vxc/tensor.hpp"

namespace vxc {

// Sample Pearson correlation. A constant vector yields 0 (with a counted
// warning) instead of NaN, which keeps blank reconstructions comparable.
inline double pearson(const float* a, const float* b, std::size_t n) {
    if (n < 2) throw ConfigError("pearson: need at least 2 elements");
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va == 0.0 || vb == 0.0) {
        counters::pearson_constant_warnings().fetch_add(1, std::memory_order_relaxed);
        return 0.0;
    }
    return cov / std::sqrt(va * vb);
}

inline double pearson(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) throw ConfigError("pearson: length mismatch");
    return pearson(a.data(), b.data(), a.size());
}

inline double pearson(const Tensor<float>& a, const Tensor<float>& b) {
    if (a.numel() != b.numel()) throw ConfigError("pearson: length mismatch");
    return pearson(a.data(), b.data(), a.numel());
}

// Correct iff the reconstruction correlates strictly higher with the ground
// truth than with every distractor; ties count as incorrect.
inline bool identify_nway(const Tensor<float>& recon, const Tensor<float>& gt,
                          const std::vector<Tensor<float>>& distractors, std::size_t n) {
    if (n < 2) throw ConfigError("identify_nway: n must be >= 2");
    if (distractors.size() != n - 1)
        throw ConfigError("identify_nway: expected " + std::to_string(n - 1) + " distractors, got " +
                          std::to_string(distractors.size()));
    if (recon.shape() != gt.shape()) throw ConfigError("identify_nway: shape mismatch");
    const auto gt_hash = fnv1a64_span(gt.data(), gt.numel());
    for (const auto& d : distractors) {
        if (d.shape() != gt.shape()) throw ConfigError("identify_nway: shape mismatch");
        if (fnv1a64_span(d.data(), d.numel()) == gt_hash)
            throw ConfigError("identify_nway: a distractor equals the ground truth");
    }
    const double r_gt = pearson(recon, gt);
    for (const auto& d : distractors)
        if (pearson(recon, d) >= r_gt) return false;
    return true;
}

enum class IdMode { exhaustive, montecarlo };

struct PerImageAccuracy {
    std::size_t image = 0;
    std::size_t correct = 0;
    std::size_t comparisons = 0;  // pairwise opponents or MC draws
    double accuracy = 0;
};

struct IdentificationResult {
    std::size_t n = 2;
    IdMode mode = IdMode::exhaustive;
    std::size_t draws = 0;  // montecarlo draws per image
    std::uint64_t seed = 0;
    std::vector<PerImageAccuracy> per_image;
    double mean_accuracy = 0;
};

// recons and gts: [T, ...] stacks with matching shapes. mode exhaustive is
// n = 2 only (all ordered opponent pairs, no RNG); montecarlo draws seeded
// distractor sets per image.
inline IdentificationResult identification_accuracy(const Tensor<float>& recons,
                                                    const Tensor<float>& gts, std::size_t n,
                                                    IdMode mode, std::size_t draws,
                                                    std::uint64_t seed) {
    if (recons.shape() != gts.shape())
        throw ConfigError("identification_accuracy: recon/gt stacks differ in shape");
    const std::size_t T = recons.dim(0);
    if (n < 2) throw ConfigError("identification_accuracy: n must be >= 2");
    if (n > T) throw ConfigError("identification_accuracy: n exceeds the number of images");
    if (mode == IdMode::exhaustive && n != 2)
        throw ConfigError("identification_accuracy: exhaustive mode is defined for n = 2 only");
    if (mode == IdMode::montecarlo && draws < 1)
        throw ConfigError("identification_accuracy: montecarlo needs draws >= 1");
    const std::size_t numel = recons.numel() / T;

    // correlation of each reconstruction against every candidate ground truth
    std::vector<double> R(T * T);
    for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j < T; ++j)
            R[i * T + j] = pearson(recons.data() + i * numel, gts.data() + j * numel, numel);

    IdentificationResult res;
    res.n = n;
    res.mode = mode;
    res.draws = mode == IdMode::montecarlo ? draws : 0;
    res.seed = seed;
    res.per_image.resize(T);
    double acc_sum = 0;
    for (std::size_t i = 0; i < T; ++i) {
        auto& pi = res.per_image[i];
        pi.image = i;
        if (mode == IdMode::exhaustive) {
            for (std::size_t j = 0; j < T; ++j) {
                if (j == i) continue;
                ++pi.comparisons;
                pi.correct += R[i * T + i] > R[i * T + j];
            }
        } else {
            std::vector<std::size_t> pick;
            for (std::size_t d = 0; d < draws; ++d) {
                Rng rng(mix_seed(seed, Stream::nway_draws, i, d));
                pick.clear();
                while (pick.size() < n - 1) {
                    const auto j = static_cast<std::size_t>(
                        rng.uniform_int(0, static_cast<std::int64_t>(T) - 1));
                    if (j == i || std::find(pick.begin(), pick.end(), j) != pick.end()) continue;
                    pick.push_back(j);
                }
                bool correct = true;
                for (std::size_t j : pick) correct &= R[i * T + i] > R[i * T + j];
                ++pi.comparisons;
                pi.correct += correct;
            }
        }
        pi.accuracy = static_cast<double>(pi.correct) / static_cast<double>(pi.comparisons);
        acc_sum += pi.accuracy;
    }
    res.mean_accuracy = acc_sum / static_cast<double>(T);
    return res;
}

// Percentile bootstrap over per-image values.
inline std::pair<double, double> bootstrap_ci(const std::vector<double>& per_image,
                                              double level, std::size_t resamples,
                                              std::uint64_t seed) {
    if (per_image.size() < 2) throw ConfigError("bootstrap_ci: need at least 2 values");
    if (resamples < 1000) throw ConfigError("bootstrap_ci: need at least 1000 resamples");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("bootstrap_ci: level must be in (0,1)");
    const std::size_t N = per_image.size();
    Rng rng(mix_seed(seed, Stream::bootstrap));
    std::vector<double> means(resamples);
    for (std::size_t r = 0; r < resamples; ++r) {
        double acc = 0;
        for (std::size_t i = 0; i < N; ++i)
            acc += per_image[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(N) - 1))];
        means[r] = acc / static_cast<double>(N);
    }
    std::sort(means.begin(), means.end());
    const double q = (1.0 - level) / 2.0;
    const auto lo_idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(resamples - 1)));
    const auto hi_idx =
        static_cast<std::size_t>(std::ceil((1.0 - q) * static_cast<double>(resamples - 1)));
    return {means[lo_idx], means[hi_idx]};
}

// Identification outcomes across the requested n values, with bootstrap CIs
// and enough metadata to reproduce every draw.
struct EvalReport {
    std::size_t n_images = 0;
    std::uint64_t eval_seed = 0;
    std::uint64_t config_hash = 0;
    std::size_t n_runs = 1;
    std::vector<IdentificationResult> results;  // one per n

    const IdentificationResult& at_n(std::size_t n) const {
        for (const auto& r : results)
            if (r.n == n) return r;
        throw ConfigError("EvalReport: no result for n = " + std::to_string(n));
    }

    std::vector<std::pair<double, double>> cis;  // aligned with results

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["n_images"] = n_images;
        j["eval_seed"] = eval_seed;
        j["config_hash"] = config_hash;
        j["n_runs"] = n_runs;
        nlohmann::json acc = nlohmann::json::object();
        nlohmann::json ci = nlohmann::json::object();
        nlohmann::json mode = nlohmann::json::object();
        for (std::size_t k = 0; k < results.size(); ++k) {
            const auto& r = results[k];
            const std::string key = std::to_string(r.n);
            acc[key] = r.mean_accuracy;
            ci[key] = {cis[k].first, cis[k].second};
            mode[key] = r.mode == IdMode::exhaustive
                            ? "exhaustive"
                            : "montecarlo(" + std::to_string(r.draws) + ")";
        }
        j["accuracy"] = acc;
        j["ci95"] = ci;
        j["mode"] = mode;
        return j;
    }

    // Per-image indicator matrix; aggregates are recomputable from the rows.
    void write_csv(const std::filesystem::path& path) const {
        std::ofstream os(path);
        if (!os) throw DataError("cannot open for writing: " + path.string());
        os << "image";
        for (const auto& r : results)
            os << ",acc_n" << r.n << ",correct_n" << r.n << ",comparisons_n" << r.n;
        os << "\n";
        char buf[64];
        for (std::size_t i = 0; i < n_images; ++i) {
            os << i;
            for (const auto& r : results) {
                std::snprintf(buf, sizeof buf, "%.17g", r.per_image[i].accuracy);
                os << "," << buf << "," << r.per_image[i].correct << ","
                   << r.per_image[i].comparisons;
            }
            os << "\n";
        }
    }
};

// Runs identification at each n (exhaustive for n = 2, seeded Monte-Carlo
// otherwise) and attaches percentile-bootstrap CIs.
inline EvalReport evaluate_reconstructions(const Tensor<float>& recons, const Tensor<float>& gts,
                                           const std::vector<std::size_t>& n_list,
                                           std::size_t mc_draws, std::size_t resamples,
                                           std::uint64_t eval_seed, std::uint64_t config_hash = 0) {
    EvalReport rep;
    rep.n_images = recons.dim(0);
    rep.eval_seed = eval_seed;
    rep.config_hash = config_hash;
    for (std::size_t n : n_list) {
        const IdMode mode = n == 2 ? IdMode::exhaustive : IdMode::montecarlo;
        auto r = identification_accuracy(recons, gts, n, mode, mc_draws, eval_seed);
        std::vector<double> per_image(rep.n_images);
        for (std::size_t i = 0; i < rep.n_images; ++i) per_image[i] = r.per_image[i].accuracy;
        rep.cis.push_back(bootstrap_ci(per_image, 0.95, resamples, mix_seed(eval_seed, n)));
        rep.results.push_back(std::move(r));
    }
    // self-consistency: aggregates must match the per-image matrix
    for (const auto& r : rep.results) {
        double acc = 0;
        for (const auto& pi : r.per_image) acc += pi.accuracy;
        acc /= static_cast<double>(r.per_image.size());
        if (std::abs(acc - r.mean_accuracy) > 1e-12)
            throw DataError("EvalReport self-consistency check failed");
    }
    return rep;
}

// Mean over voxels of the across-image correlation between predicted and
// measured responses; the phase-1 quality metric.
inline double encoder_voxel_correlation(EncoderParams<float>& enc, const Tensor<float>& images,
                                        const Tensor<float>& fmri) {
    if (images.dim(0) != fmri.dim(0))
        throw ConfigError("encoder_voxel_correlation: row mismatch");
    NoGradGuard ng;
    auto pred = encode(enc, images, Mode::eval);
    const std::size_t N = fmri.dim(0), V = fmri.dim(1);
    std::vector<float> a(N), b(N);
    double acc = 0;
    for (std::size_t v = 0; v < V; ++v) {
        for (std::size_t i = 0; i < N; ++i) {
            a[i] = pred.data()[i * V + v];
            b[i] = fmri.data()[i * V + v];
        }
        acc += pearson(a.data(), b.data(), N);
    }
    return acc / static_cast<double>(V);
}

}  // namespace vxc
