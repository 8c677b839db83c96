#pragma once

#include "vxc/nets.hpp"
#include "vxc/ops.hpp"

namespace vxc {

// Blend and proportionality constants for the three losses. The lambda_*
// defaults were tuned once on the synthetic benchmark and are frozen here;
// the objective term scales default to an unweighted sum.
struct LossWeights {
    double alpha = 0.9;        // voxel-loss blend between L2 and cosine terms
    double lambda_rgb = 1.0;
    double lambda_feat = 0.15;
    double lambda_tv = 0.05;
    double lambda_d = 1.0;
    double lambda_ed = 1.0;
    double lambda_de = 1.0;

    void validate() const {
        if (!(alpha >= 0.0 && alpha <= 1.0))
            throw ConfigError("LossWeights: alpha must lie in [0,1]");
        for (double v : {lambda_rgb, lambda_feat, lambda_tv, lambda_d, lambda_ed, lambda_de})
            if (!(v >= 0.0) || !std::isfinite(v))
                throw ConfigError("LossWeights: lambda values must be finite and nonnegative");
    }
};

// alpha * ||rhat - r||_2 + (1 - alpha) * (1 - cos), averaged over the batch.
template <class T>
Tensor<T> fmri_loss(const Tensor<T>& rhat, const Tensor<T>& r, T alpha) {
    return fmri_pair_loss(rhat, r, alpha);
}

// Anisotropic total variation, normalized by element count.
template <class T>
Tensor<T> tv(const Tensor<T>& image) {
    return tv_loss(image);
}

// Root-mean-square difference across both phi stages, treated as one long
// feature vector. Guarded sqrt keeps the identity case finite.
template <class T>
Tensor<T> feature_rms(const FeatureBank<T>& bank, const Tensor<T>& a, const Tensor<T>& b) {
    auto [fa1, fa2] = feature_extract(bank, a);
    auto [fb1, fb2] = feature_extract(bank, b);
    Tensor<T> d1 = sub(fa1, fb1);
    Tensor<T> d2 = sub(fa2, fb2);
    Tensor<T> ss = add(sum(mul(d1, d1)), sum(mul(d2, d2)));
    const T inv = T(1) / static_cast<T>(fa1.numel() + fa2.numel());
    return sqrt_op(scale(ss, inv));
}

// lambda_rgb * mean|shat - s| + lambda_feat * RMS(phi(shat) - phi(s))
// + lambda_tv * tv(shat).
template <class T>
Tensor<T> image_loss(const Tensor<T>& shat, const Tensor<T>& s, const FeatureBank<T>& bank,
                     const LossWeights& w) {
    detail::check_same_shape(shat, s, "image_loss");
    Tensor<T> total = scale(l1_mean(shat, s), static_cast<T>(w.lambda_rgb));
    if (w.lambda_feat != 0.0)
        total = add(total, scale(feature_rms(bank, shat, s), static_cast<T>(w.lambda_feat)));
    if (w.lambda_tv != 0.0)
        total = add(total, scale(tv_loss(shat), static_cast<T>(w.lambda_tv)));
    return total;
}

// Image -> encoder -> decoder round trip on unlabeled images. The encoder
// runs frozen in eval mode, so gradients reach the decoder only.
template <class T>
struct CycleResult {
    Tensor<T> output;
    Tensor<T> loss;
};

template <class T>
CycleResult<T> ed_cycle(EncoderParams<T>& enc, DecoderParams<T>& dec, const Tensor<T>& images,
                        const LossWeights& w, Mode encoder_mode = Mode::eval,
                        Mode decoder_mode = Mode::train) {
    Tensor<T> rhat = encode(enc, images, encoder_mode);
    Tensor<T> shat = decode(dec, rhat, decoder_mode);
    return {shat, image_loss(shat, images, enc.bank, w)};
}

// Response -> decoder -> encoder round trip on unlabeled responses.
template <class T>
CycleResult<T> de_cycle(EncoderParams<T>& enc, DecoderParams<T>& dec, const Tensor<T>& voxels,
                        const LossWeights& w, Mode encoder_mode = Mode::eval,
                        Mode decoder_mode = Mode::train) {
    Tensor<T> shat = decode(dec, voxels, decoder_mode);
    Tensor<T> rhat = encode(enc, shat, encoder_mode);
    return {rhat, fmri_pair_loss(rhat, voxels, static_cast<T>(w.alpha))};
}

// lambda_d * L_D + lambda_ed * L_ED + lambda_de * L_DE over the three batch
// slices; empty slices contribute nothing, all-empty is an error.
template <class T>
Tensor<T> decoder_objective(EncoderParams<T>& enc, DecoderParams<T>& dec,
                            const Tensor<T>& paired_images, const Tensor<T>& paired_voxels,
                            const Tensor<T>& unlabeled_images, const Tensor<T>& unlabeled_voxels,
                            const LossWeights& w, Mode encoder_mode = Mode::eval,
                            Mode decoder_mode = Mode::train) {
    const bool has_pairs = paired_images.numel() > 0 && w.lambda_d != 0.0;
    const bool has_images = unlabeled_images.numel() > 0 && w.lambda_ed != 0.0;
    const bool has_voxels = unlabeled_voxels.numel() > 0 && w.lambda_de != 0.0;
    if (paired_images.numel() == 0 && unlabeled_images.numel() == 0 &&
        unlabeled_voxels.numel() == 0)
        throw ConfigError("decoder_objective: all three sub-batches are empty");

    // Zero-weighted terms are skipped outright so that an ablated run is
    // bit-identical to one fed empty slices (BN statistics included).
    Tensor<T> total = Tensor<T>::scalar(T(0));
    if (has_pairs) {
        Tensor<T> shat = decode(dec, paired_voxels, decoder_mode);
        total = add(total, scale(image_loss(shat, paired_images, enc.bank, w),
                                 static_cast<T>(w.lambda_d)));
    }
    if (has_images)
        total = add(total, scale(ed_cycle(enc, dec, unlabeled_images, w, encoder_mode,
                                          decoder_mode).loss,
                                 static_cast<T>(w.lambda_ed)));
    if (has_voxels)
        total = add(total, scale(de_cycle(enc, dec, unlabeled_voxels, w, encoder_mode,
                                          decoder_mode).loss,
                                 static_cast<T>(w.lambda_de)));
    return total;
}

}  // namespace vxc
