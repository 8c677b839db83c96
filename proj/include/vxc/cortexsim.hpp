#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "vxc/rng.hpp"
#include "vxc/tensor.hpp"

namespace vxc {

enum class Nonlinearity { identity, softplus };

inline Nonlinearity nonlinearity_from_string(const std::string& s) {
    if (s == "identity") return Nonlinearity::identity;
    if (s == "softplus") return Nonlinearity::softplus;
    throw ConfigError("unknown nonlinearity: " + s);
}

inline std::string to_string(Nonlinearity n) {
    return n == Nonlinearity::identity ? "identity" : "softplus";
}

// Ground-truth encoding model: one localized Gaussian-windowed oriented
// grating per voxel, unit-normalized, with an optional pointwise
// nonlinearity and per-voxel Gaussian measurement noise.
struct SyntheticBrain {
    std::size_t voxel_count = 0;
    std::size_t image_side = 0;
    std::size_t channels = 1;
    Nonlinearity nonlinearity = Nonlinearity::identity;
    std::vector<float> filters;      // [V, C, H, W] row-major, unit L2 per voxel
    std::vector<float> noise_sigma;  // per voxel
    std::uint64_t seed = 0;

    std::uint64_t filter_checksum() const { return fnv1a64_span(filters.data(), filters.size()); }
};

inline SyntheticBrain make_brain(std::size_t voxel_count, std::size_t image_side,
                                 std::size_t channels, double noise_sigma,
                                 Nonlinearity nonlinearity, std::uint64_t seed) {
    if (voxel_count < 1) throw ConfigError("make_brain: voxel_count must be >= 1");
    if (image_side < 4) throw ConfigError("make_brain: image_side must be >= 4");
    SyntheticBrain b;
    b.voxel_count = voxel_count;
    b.image_side = image_side;
    b.channels = channels;
    b.nonlinearity = nonlinearity;
    b.seed = seed;
    b.noise_sigma.assign(voxel_count, static_cast<float>(noise_sigma));
    b.filters.resize(voxel_count * channels * image_side * image_side);

    const double side = static_cast<double>(image_side);

    // Receptive fields form retinotopic clusters with shared tuning: each
    // cluster anchors a patch and a preferred orientation/scale, and its
    // voxels jitter around both. The population code is highly redundant and
    // covers the image only partially, which keeps decoding ill-posed the
    // way scarce labeled pairs demand.
    struct Cluster {
        double cx, cy, theta, wavelength, sigma;
    };
    const std::size_t n_clusters = std::max<std::size_t>(2, voxel_count / 128);
    std::vector<Cluster> clusters(n_clusters);
    {
        Rng arng(mix_seed(seed, Stream::brain_filters, 0xa11c0));
        for (auto& c : clusters) {
            c.cx = (0.2 + 0.6 * arng.uniform()) * side;
            c.cy = (0.2 + 0.6 * arng.uniform()) * side;
            c.theta = arng.uniform() * 3.14159265358979323846;
            // wavelengths long enough that small fixation-jitter shifts do
            // not flip the carrier phase
            c.wavelength = (0.2 + 0.25 * arng.uniform()) * side;
            c.sigma = (0.06 + 0.06 * arng.uniform()) * side;
        }
    }
    for (std::size_t v = 0; v < voxel_count; ++v) {
        Rng rng(mix_seed(seed, Stream::brain_filters, v + 1));
        const auto& cl = clusters[v % n_clusters];
        const double cx = std::clamp(cl.cx + 0.06 * side * rng.normal(), 0.05 * side, 0.95 * side);
        const double cy = std::clamp(cl.cy + 0.06 * side * rng.normal(), 0.05 * side, 0.95 * side);
        const double theta = cl.theta + 0.15 * rng.normal();
        const double wavelength = cl.wavelength * (1.0 + 0.1 * rng.normal());
        const double sigma = std::max(1.2, cl.sigma * (1.0 + 0.1 * rng.normal()));
        const double phase = rng.uniform() * 6.28318530717958647692;
        std::vector<double> chan_w(b.channels, 1.0);
        if (b.channels > 1)
            for (auto& w : chan_w) w = 0.25 + 0.75 * rng.uniform();

        float* f = b.filters.data() + v * channels * image_side * image_side;
        double norm2 = 0.0;
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t y = 0; y < image_side; ++y)
                for (std::size_t x = 0; x < image_side; ++x) {
                    const double dx = static_cast<double>(x) - cx;
                    const double dy = static_cast<double>(y) - cy;
                    const double env = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                    const double carrier = std::cos(
                        6.28318530717958647692 * (dx * std::cos(theta) + dy * std::sin(theta)) /
                            wavelength +
                        phase);
                    const double val = chan_w[c] * env * carrier;
                    f[(c * image_side + y) * image_side + x] = static_cast<float>(val);
                    norm2 += val * val;
                }
        const float inv = norm2 > 0 ? static_cast<float>(1.0 / std::sqrt(norm2)) : 0.f;
        for (std::size_t i = 0; i < channels * image_side * image_side; ++i) f[i] *= inv;
    }
    return b;
}

// r = nonlinearity(filters . s) + N(0, sigma^2), noise keyed by noise_seed.
// An optional per-voxel session transform g*r + o models scanner-session
// drift between recording blocks.
inline std::vector<float> respond(const SyntheticBrain& brain, const float* image,
                                  std::uint64_t noise_seed, const float* session_gain = nullptr,
                                  const float* session_offset = nullptr) {
    const std::size_t n = brain.channels * brain.image_side * brain.image_side;
    std::vector<float> r(brain.voxel_count);
    for (std::size_t v = 0; v < brain.voxel_count; ++v) {
        const float* f = brain.filters.data() + v * n;
        double acc = 0;
        for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(f[i]) * image[i];
        if (brain.nonlinearity == Nonlinearity::softplus)
            acc = acc > 30.0 ? acc : std::log1p(std::exp(acc));
        if (session_gain) acc *= session_gain[v];
        if (session_offset) acc += session_offset[v];
        r[v] = static_cast<float>(acc);
    }
    bool any_noise = false;
    for (float s : brain.noise_sigma) any_noise |= s != 0.f;
    if (any_noise) {
        Rng rng(noise_seed);
        for (std::size_t v = 0; v < brain.voxel_count; ++v)
            r[v] += brain.noise_sigma[v] * static_cast<float>(rng.normal());
    }
    return r;
}

inline Tensor<float> respond_batch(const SyntheticBrain& brain, const Tensor<float>& images,
                                   std::uint64_t noise_seed) {
    const std::size_t n = images.dim(0);
    std::vector<float> out(n * brain.voxel_count);
    const std::size_t stride = brain.channels * brain.image_side * brain.image_side;
    for (std::size_t i = 0; i < n; ++i) {
        auto r = respond(brain, images.data() + i * stride, mix_seed(noise_seed, i));
        std::copy(r.begin(), r.end(), out.begin() + i * brain.voxel_count);
    }
    return Tensor<float>::from_vector(std::move(out), {n, brain.voxel_count});
}

// ---------------------------------------------------------------------------
// Procedural natural-statistics image sampler
// ---------------------------------------------------------------------------

namespace detail {

// Naive separable DFT, O(side^3); plenty at the sides this project uses.
inline void dft2(std::vector<std::complex<double>>& f, std::size_t side, bool inverse) {
    const double sgn = inverse ? 1.0 : -1.0;
    std::vector<std::complex<double>> tw(side * side);
    for (std::size_t k = 0; k < side; ++k)
        for (std::size_t x = 0; x < side; ++x) {
            const double ang = sgn * 6.28318530717958647692 * static_cast<double>(k * x) /
                               static_cast<double>(side);
            tw[k * side + x] = {std::cos(ang), std::sin(ang)};
        }
    std::vector<std::complex<double>> tmp(side);
    // rows
    for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t k = 0; k < side; ++k) {
            std::complex<double> acc = 0;
            for (std::size_t x = 0; x < side; ++x) acc += f[y * side + x] * tw[k * side + x];
            tmp[k] = acc;
        }
        for (std::size_t k = 0; k < side; ++k) f[y * side + k] = tmp[k];
    }
    // columns
    for (std::size_t x = 0; x < side; ++x) {
        for (std::size_t k = 0; k < side; ++k) {
            std::complex<double> acc = 0;
            for (std::size_t y = 0; y < side; ++y) acc += f[y * side + x] * tw[k * side + y];
            tmp[k] = acc;
        }
        for (std::size_t k = 0; k < side; ++k) f[k * side + x] = tmp[k];
    }
    if (inverse) {
        const double inv = 1.0 / static_cast<double>(side * side);
        for (auto& v : f) v *= inv;
    }
}

}  // namespace detail

// Zero-mean, unit-variance Gaussian random field with a 1/f amplitude
// spectrum (power ~ 1/f^2). Exposed separately so its spectrum is testable
// before disc compositing.
inline std::vector<double> sample_grf(std::size_t side, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::complex<double>> f(side * side);
    for (auto& v : f) v = {rng.normal(), 0.0};
    detail::dft2(f, side, false);
    for (std::size_t ky = 0; ky < side; ++ky)
        for (std::size_t kx = 0; kx < side; ++kx) {
            const double fy = static_cast<double>(std::min(ky, side - ky));
            const double fx = static_cast<double>(std::min(kx, side - kx));
            const double freq = std::sqrt(fx * fx + fy * fy);
            f[ky * side + kx] *= freq > 0 ? 1.0 / freq : 0.0;
        }
    detail::dft2(f, side, true);
    std::vector<double> out(side * side);
    double mean = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = f[i].real();
        mean += out[i];
    }
    mean /= static_cast<double>(out.size());
    double var = 0;
    for (auto& v : out) {
        v -= mean;
        var += v * v;
    }
    var /= static_cast<double>(out.size());
    const double inv = var > 0 ? 1.0 / std::sqrt(var) : 0.0;
    for (auto& v : out) v *= inv;
    return out;
}

// One procedural image: 1/f field composited with opaque dead-leaves
// ellipses at moderate contrast, clipped to [0,1]. `style` in [0,1] sweeps a
// category axis (shape density, size and contrast ranges), standing in for
// the semantic categories of a natural-image corpus; the parameter ranges
// give the family enough degrees of freedom that a few hundred samples
// undersample it. Deterministic from the seed.
inline std::vector<float> sample_image(std::size_t side, std::size_t channels,
                                       std::uint64_t seed, double style = 0.5) {
    if (!(style >= 0.0 && style <= 1.0))
        throw ConfigError("sample_image: style must lie in [0,1]");
    Rng rng(mix_seed(seed, 1));
    const auto field = sample_grf(side, mix_seed(seed, 2));
    std::vector<float> img(channels * side * side);
    for (std::size_t c = 0; c < channels; ++c) {
        const double gain = 0.13 + 0.06 * style + (channels > 1 ? 0.02 * rng.uniform() : 0.0);
        for (std::size_t i = 0; i < side * side; ++i)
            img[c * side * side + i] = static_cast<float>(0.5 + gain * field[i]);
    }
    const std::size_t lo = 8 + static_cast<std::size_t>(12.0 * style);
    const std::size_t hi = 16 + static_cast<std::size_t>(18.0 * style);
    const std::size_t shapes =
        static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo),
                                                 static_cast<std::int64_t>(hi)));
    for (std::size_t d = 0; d < shapes; ++d) {
        const double cx = rng.uniform() * static_cast<double>(side);
        const double cy = rng.uniform() * static_cast<double>(side);
        const double a_lo = 0.04 + 0.05 * (1.0 - style);
        const double a = (a_lo + 0.08 * rng.uniform()) * static_cast<double>(side);
        const double b = a * (0.3 + 0.7 * rng.uniform());
        const double theta = rng.uniform() * 3.14159265358979323846;
        const double ct = std::cos(theta), st = std::sin(theta);
        const double contrast = 0.3 + 0.1 * style;
        const double base = 0.5 + contrast * (2.0 * rng.uniform() - 1.0);
        std::vector<double> inten(channels, base);
        if (channels > 1)
            for (auto& v : inten) v = std::clamp(base + 0.2 * (rng.uniform() - 0.5), 0.0, 1.0);
        for (std::size_t y = 0; y < side; ++y)
            for (std::size_t x = 0; x < side; ++x) {
                const double dx = static_cast<double>(x) - cx;
                const double dy = static_cast<double>(y) - cy;
                const double u = (dx * ct + dy * st) / a;
                const double v = (-dx * st + dy * ct) / b;
                if (u * u + v * v > 1.0) continue;
                for (std::size_t c = 0; c < channels; ++c)
                    img[(c * side + y) * side + x] = static_cast<float>(inten[c]);
            }
    }
    for (auto& v : img) v = std::clamp(v, 0.f, 1.f);
    return img;
}

// Style ranges per pool. The defaults mirror the category structure of the
// reference datasets: test stimuli come from categories disjoint from the
// training pairs, while the unlabeled pool spans everything.
struct PoolStyles {
    double train_lo = 0.55, train_hi = 1.0;
    double test_lo = 0.0, test_hi = 0.45;
    double unlabeled_lo = 0.0, unlabeled_hi = 1.0;
};

inline Tensor<float> sample_images(std::size_t n, std::size_t side, std::size_t channels,
                                   std::uint64_t seed, double style_lo = 0.0,
                                   double style_hi = 1.0) {
    if (n < 1) throw ConfigError("sample_images: n must be >= 1");
    std::vector<float> out(n * channels * side * side);
    const std::size_t stride = channels * side * side;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t s = mix_seed(seed, Stream::image_pool, i);
        Rng srng(mix_seed(s, 3));
        const double style = style_lo + (style_hi - style_lo) * srng.uniform();
        const auto img = sample_image(side, channels, s, style);
        std::copy(img.begin(), img.end(), out.begin() + i * stride);
    }
    return Tensor<float>::from_vector(std::move(out), {n, channels, side, side});
}

// ---------------------------------------------------------------------------
// Cohort
// ---------------------------------------------------------------------------

// Labeled single-measurement train pairs, repeat-measured test stimuli,
// an unlabeled image pool disjoint from both, and the voxel screening mask.
struct Cohort {
    std::size_t image_side = 0;
    std::size_t channels = 1;
    std::size_t voxel_count = 0;
    std::size_t repeats = 0;

    Tensor<float> train_images;       // [N, C, S, S]
    Tensor<float> train_fmri;         // [N, V] single measurement each
    Tensor<float> test_images;        // [T, C, S, S] ground truth, evaluation only
    Tensor<float> test_fmri_repeats;  // [T, m, V]
    Tensor<float> unlabeled_images;   // [U, C, S, S]
    std::vector<std::uint8_t> voxel_mask;  // 1 = keep

    std::size_t n_train() const { return train_images.numel() ? train_images.dim(0) : 0; }
    std::size_t n_test() const { return test_images.numel() ? test_images.dim(0) : 0; }
    std::size_t n_unlabeled() const { return unlabeled_images.numel() ? unlabeled_images.dim(0) : 0; }
    std::size_t kept_voxels() const {
        std::size_t k = 0;
        for (auto m : voxel_mask) k += m != 0;
        return k;
    }

    // Projects all response arrays onto the kept voxels; the result carries
    // an all-true mask over the reduced voxel set.
    Cohort masked() const {
        const std::size_t keep = kept_voxels();
        if (keep == voxel_count) return *this;
        Cohort out = *this;
        out.voxel_count = keep;
        out.voxel_mask.assign(keep, 1);
        auto project = [&](const Tensor<float>& t, std::size_t rows) {
            std::vector<float> v(rows * keep);
            std::size_t w = 0;
            for (std::size_t vx = 0; vx < voxel_count; ++vx) {
                if (!voxel_mask[vx]) continue;
                for (std::size_t rw = 0; rw < rows; ++rw)
                    v[rw * keep + w] = t.data()[rw * voxel_count + vx];
                ++w;
            }
            return v;
        };
        if (train_fmri.numel())
            out.train_fmri = Tensor<float>::from_vector(project(train_fmri, n_train()),
                                                        {n_train(), keep});
        if (test_fmri_repeats.numel())
            out.test_fmri_repeats = Tensor<float>::from_vector(
                project(test_fmri_repeats, n_test() * repeats), {n_test(), repeats, keep});
        return out;
    }
};

// Arithmetic mean over repeats, [T, m, V] -> [T, V].
inline Tensor<float> average_repeats(const Tensor<float>& test_fmri_repeats) {
    if (test_fmri_repeats.shape().size() != 3)
        throw ConfigError("average_repeats: expected [T, m, V]");
    const std::size_t T = test_fmri_repeats.dim(0), m = test_fmri_repeats.dim(1),
                      V = test_fmri_repeats.dim(2);
    if (m < 1) throw ConfigError("average_repeats: need at least one repeat");
    std::vector<float> out(T * V, 0.f);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t v = 0; v < V; ++v)
                out[t * V + v] += test_fmri_repeats.data()[(t * m + j) * V + v];
    const float inv = 1.f / static_cast<float>(m);
    for (auto& v : out) v *= inv;
    return Tensor<float>::from_vector(std::move(out), {T, V});
}

// Per-voxel SNR = variance across stimuli of the repeat-mean over the mean
// within-stimulus repeat variance. Keeps exactly keep_k voxels, ties broken
// toward the lower voxel index; a zero denominator with signal counts as
// infinite SNR.
inline std::vector<std::uint8_t> snr_screen(const Tensor<float>& test_fmri_repeats,
                                            std::size_t keep_k) {
    if (test_fmri_repeats.shape().size() != 3)
        throw ConfigError("snr_screen: expected [T, m, V]");
    const std::size_t T = test_fmri_repeats.dim(0), m = test_fmri_repeats.dim(1),
                      V = test_fmri_repeats.dim(2);
    if (T < 2 || m < 2) throw ConfigError("snr_screen: need >= 2 stimuli and >= 2 repeats");
    if (keep_k > V)
        throw ConfigError("snr_screen: keep_k " + std::to_string(keep_k) + " exceeds voxel count " +
                          std::to_string(V));

    std::vector<double> snr(V);
    for (std::size_t v = 0; v < V; ++v) {
        std::vector<double> means(T);
        double within = 0;
        for (std::size_t t = 0; t < T; ++t) {
            double mu = 0;
            for (std::size_t j = 0; j < m; ++j)
                mu += test_fmri_repeats.data()[(t * m + j) * V + v];
            mu /= static_cast<double>(m);
            means[t] = mu;
            double var = 0;
            for (std::size_t j = 0; j < m; ++j) {
                const double d = test_fmri_repeats.data()[(t * m + j) * V + v] - mu;
                var += d * d;
            }
            within += var / static_cast<double>(m - 1);
        }
        within /= static_cast<double>(T);
        double grand = 0;
        for (double mu : means) grand += mu;
        grand /= static_cast<double>(T);
        double across = 0;
        for (double mu : means) across += (mu - grand) * (mu - grand);
        across /= static_cast<double>(T - 1);
        snr[v] = within > 0 ? across / within
                            : (across > 0 ? std::numeric_limits<double>::infinity() : 0.0);
    }

    std::vector<std::size_t> order(V);
    for (std::size_t i = 0; i < V; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (snr[a] != snr[b]) return snr[a] > snr[b];
        return a < b;
    });
    std::vector<std::uint8_t> mask(V, 0);
    for (std::size_t i = 0; i < keep_k; ++i) mask[order[i]] = 1;
    return mask;
}

// Rescales each voxel's filter (and noise sigma) so its noiseless response
// has standard deviation `kappa` over the given stimulus ensemble — the
// usual per-voxel standardization of preprocessed recordings, with the
// overall unit chosen so voxel-space and image-space losses are comparable.
inline void standardize_response_scale(SyntheticBrain& brain, const Tensor<float>& images,
                                       double kappa) {
    if (kappa <= 0) throw ConfigError("standardize_response_scale: kappa must be positive");
    const std::size_t n = images.dim(0), V = brain.voxel_count;
    const std::size_t stride = brain.channels * brain.image_side * brain.image_side;
    // a nonlinearity makes output std nonlinear in the filter scale; a few
    // fixed-point sweeps settle it
    const int sweeps = brain.nonlinearity == Nonlinearity::identity ? 1 : 3;
    for (int sweep = 0; sweep < sweeps; ++sweep) {
        SyntheticBrain clean = brain;
        clean.noise_sigma.assign(brain.voxel_count, 0.f);
        auto r = respond_batch(clean, images, 0);
        for (std::size_t v = 0; v < V; ++v) {
            double mu = 0;
            for (std::size_t i = 0; i < n; ++i) mu += r.data()[i * V + v];
            mu /= static_cast<double>(n);
            double var = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = r.data()[i * V + v] - mu;
                var += d * d;
            }
            var /= static_cast<double>(n - 1);
            const double scale = kappa / std::max(std::sqrt(var), 1e-12);
            float* f = brain.filters.data() + v * stride;
            for (std::size_t i = 0; i < stride; ++i) f[i] = static_cast<float>(f[i] * scale);
            brain.noise_sigma[v] = static_cast<float>(brain.noise_sigma[v] * scale);
        }
    }
}

// Per-voxel noise sigma that yields the requested SNR (signal variance over
// noise variance) against the given stimulus ensemble.
inline std::vector<float> calibrate_noise(const SyntheticBrain& brain,
                                          const Tensor<float>& images, double target_snr) {
    if (target_snr <= 0) throw ConfigError("calibrate_noise: target_snr must be positive");
    SyntheticBrain clean = brain;
    clean.noise_sigma.assign(brain.voxel_count, 0.f);
    auto r = respond_batch(clean, images, 0);
    const std::size_t n = images.dim(0), V = brain.voxel_count;
    std::vector<float> sigma(V);
    for (std::size_t v = 0; v < V; ++v) {
        double mu = 0;
        for (std::size_t i = 0; i < n; ++i) mu += r.data()[i * V + v];
        mu /= static_cast<double>(n);
        double var = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = r.data()[i * V + v] - mu;
            var += d * d;
        }
        var /= static_cast<double>(n - 1);
        sigma[v] = static_cast<float>(std::sqrt(var / target_snr));
    }
    return sigma;
}

// Session drift applied to the test recording block: per-voxel gain and
// offset, fixed across the whole test cohort. The train and test blocks of
// real recordings never share identical response statistics; this is the
// gap the D-E self-supervision is there to absorb.
struct SessionDrift {
    double gain_log_std = 0.0;      // g_v = exp(gain_log_std * N(0,1))
    double offset_noise_std = 0.0;  // o_v = offset_noise_std * sigma_v * N(0,1)
};

// Builds a cohort from pre-supplied image pools: one noisy measurement per
// train image, m repeats per test stimulus. Pools must be pairwise disjoint.
inline Cohort generate_cohort_from_pools(const SyntheticBrain& brain, Tensor<float> train_images,
                                         Tensor<float> test_images,
                                         Tensor<float> unlabeled_images, std::size_t repeats,
                                         std::uint64_t seed,
                                         const SessionDrift& drift = SessionDrift{}) {
    if (repeats < 1) throw ConfigError("generate_cohort: repeat count must be >= 1");
    for (const auto* pool : {&train_images, &test_images, &unlabeled_images})
        if (pool->shape().size() != 4 || pool->dim(0) < 1 || pool->dim(1) != brain.channels ||
            pool->dim(2) != brain.image_side || pool->dim(3) != brain.image_side)
            throw ConfigError("generate_cohort: pool shape " + shape_str(pool->shape()) +
                              " does not match the brain geometry");
    Cohort c;
    c.image_side = brain.image_side;
    c.channels = brain.channels;
    c.voxel_count = brain.voxel_count;
    c.repeats = repeats;
    c.voxel_mask.assign(brain.voxel_count, 1);
    c.train_images = std::move(train_images);
    c.test_images = std::move(test_images);
    c.unlabeled_images = std::move(unlabeled_images);

    const std::size_t stride = brain.channels * brain.image_side * brain.image_side;
    const std::size_t n_train = c.train_images.dim(0), n_test = c.test_images.dim(0);

    // pool disjointness, checked by content hash
    std::set<std::uint64_t> hashes;
    for (auto* pool : {&c.train_images, &c.test_images, &c.unlabeled_images})
        for (std::size_t i = 0; i < pool->dim(0); ++i) {
            const auto h = fnv1a64_span(pool->data() + i * stride, stride);
            if (!hashes.insert(h).second)
                throw DataError("generate_cohort: image hash collision across pools");
        }

    std::vector<float> tf(n_train * brain.voxel_count);
    for (std::size_t i = 0; i < n_train; ++i) {
        const auto r = respond(brain, c.train_images.data() + i * stride,
                               mix_seed(seed, Stream::train_noise, i));
        std::copy(r.begin(), r.end(), tf.begin() + i * brain.voxel_count);
    }
    c.train_fmri = Tensor<float>::from_vector(std::move(tf), {n_train, brain.voxel_count});

    // one session transform for the entire test block
    std::vector<float> gain(brain.voxel_count, 1.f), offset(brain.voxel_count, 0.f);
    {
        Rng srng(mix_seed(seed, Stream::test_noise, 0x5e55));
        for (std::size_t v = 0; v < brain.voxel_count; ++v) {
            gain[v] = static_cast<float>(std::exp(drift.gain_log_std * srng.normal()));
            offset[v] = static_cast<float>(drift.offset_noise_std * brain.noise_sigma[v] *
                                           srng.normal());
        }
    }
    std::vector<float> rf(n_test * repeats * brain.voxel_count);
    for (std::size_t t = 0; t < n_test; ++t)
        for (std::size_t j = 0; j < repeats; ++j) {
            const auto r = respond(brain, c.test_images.data() + t * stride,
                                   mix_seed(seed, Stream::test_noise, t, j), gain.data(),
                                   offset.data());
            std::copy(r.begin(), r.end(), rf.begin() + (t * repeats + j) * brain.voxel_count);
        }
    c.test_fmri_repeats =
        Tensor<float>::from_vector(std::move(rf), {n_test, repeats, brain.voxel_count});
    return c;
}

// Generates all pools procedurally: single-measurement train pairs, m
// repeats per test stimulus, and the disjoint unlabeled image pool.
inline Cohort generate_cohort(const SyntheticBrain& brain, std::size_t n_train,
                              std::size_t n_test, std::size_t n_unlabeled, std::size_t repeats,
                              std::uint64_t seed, const SessionDrift& drift = SessionDrift{},
                              const PoolStyles& styles = PoolStyles{}) {
    if (n_train < 1 || n_test < 1 || n_unlabeled < 1 || repeats < 1)
        throw ConfigError("generate_cohort: all pool sizes and the repeat count must be >= 1");
    const std::size_t stride = brain.channels * brain.image_side * brain.image_side;
    auto draw_pool = [&](std::size_t count, std::size_t offset, double lo, double hi) {
        std::vector<float> v(count * stride);
        for (std::size_t i = 0; i < count; ++i) {
            const std::uint64_t s = mix_seed(seed, Stream::image_pool, offset + i);
            Rng srng(mix_seed(s, 3));
            const double style = lo + (hi - lo) * srng.uniform();
            const auto img = sample_image(brain.image_side, brain.channels, s, style);
            std::copy(img.begin(), img.end(), v.begin() + i * stride);
        }
        return Tensor<float>::from_vector(std::move(v), {count, brain.channels, brain.image_side,
                                                         brain.image_side});
    };
    return generate_cohort_from_pools(
        brain, draw_pool(n_train, 0, styles.train_lo, styles.train_hi),
        draw_pool(n_test, n_train, styles.test_lo, styles.test_hi),
        draw_pool(n_unlabeled, n_train + n_test, styles.unlabeled_lo, styles.unlabeled_hi),
        repeats, seed, drift);
}

}  // namespace vxc
