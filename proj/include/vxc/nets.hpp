#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "vxc/ops.hpp"
#include "vxc/optim.hpp"
#include "vxc/rng.hpp"

namespace vxc {

// Fixed random front-end / feature-extractor geometry. The front-end plays
// the role of a pretrained first conv layer; phi supplies the two fixed
// conv+ReLU stages used by the feature term of the image loss.
struct FrontendConfig {
    std::size_t filters = 32;
    std::size_t kernel = 5;
    std::size_t stride = 2;
    std::size_t pad = 2;
};

struct PhiConfig {
    std::size_t c1 = 16;
    std::size_t c2 = 32;
    std::size_t kernel = 3;
    std::size_t pad = 1;
};

struct NetConfig {
    std::size_t image_side = 112;
    std::size_t channels = 3;
    std::size_t voxel_count = 1;
    std::size_t base_side = 14;        // decoder seed resolution
    std::size_t decoder_channels = 64;
    std::size_t encoder_channels = 32;
    std::size_t n_blocks = 3;
    FrontendConfig frontend;
    PhiConfig phi;
    std::uint64_t seed = 0;

    std::size_t upsample_factor() const { return std::size_t(1) << n_blocks; }

    // Spatial side of the encoder feature maps right before the FC layer.
    std::size_t encoder_final_side() const {
        return image_side / frontend.stride / upsample_factor();
    }
    std::size_t encoder_fc_inputs() const {
        const std::size_t s = encoder_final_side();
        return encoder_channels * s * s;
    }

    void validate() const {
        if (channels != 1 && channels != 3)
            throw ConfigError("NetConfig: channels must be 1 or 3");
        if (voxel_count < 1) throw ConfigError("NetConfig: voxel_count must be >= 1");
        if (n_blocks < 1) throw ConfigError("NetConfig: n_blocks must be >= 1");
        if (image_side != base_side * upsample_factor())
            throw ConfigError("NetConfig: image_side " + std::to_string(image_side) +
                              " must equal base_side * 2^n_blocks = " +
                              std::to_string(base_side * upsample_factor()));
        if (frontend.stride == 0 || image_side % frontend.stride != 0)
            throw ConfigError("NetConfig: front-end stride must divide image_side");
        if ((image_side / frontend.stride) % upsample_factor() != 0)
            throw ConfigError("NetConfig: encoder blocks do not divide the front-end maps evenly");
        if (encoder_final_side() == 0)
            throw ConfigError("NetConfig: encoder spatial size collapses to zero");
        if (frontend.kernel > image_side + 2 * frontend.pad)
            throw ConfigError("NetConfig: front-end kernel larger than padded image");
    }
};

// Immutable seeded conv banks standing in for pretrained feature extractors:
// the encoder front-end filters plus the two phi stages.
template <class T>
struct FeatureBank {
    Tensor<T> frontend_w;  // [F, C, k, k]
    Tensor<T> phi1_w;      // [c1, C, 3, 3]
    Tensor<T> phi2_w;      // [c2, c1, 3, 3]
    std::uint64_t seed = 0;

    static FeatureBank make(const NetConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        FeatureBank b;
        b.seed = seed;
        const auto& fe = cfg.frontend;
        const auto& ph = cfg.phi;
        b.frontend_w = glorot_normal_init<T>({fe.filters, cfg.channels, fe.kernel, fe.kernel},
                                             cfg.channels * fe.kernel * fe.kernel,
                                             fe.filters * fe.kernel * fe.kernel,
                                             mix_seed(seed, Stream::param_init, 1001));
        b.phi1_w = glorot_normal_init<T>({ph.c1, cfg.channels, ph.kernel, ph.kernel},
                                         cfg.channels * ph.kernel * ph.kernel,
                                         ph.c1 * ph.kernel * ph.kernel,
                                         mix_seed(seed, Stream::param_init, 1002));
        b.phi2_w = glorot_normal_init<T>({ph.c2, ph.c1, ph.kernel, ph.kernel},
                                         ph.c1 * ph.kernel * ph.kernel,
                                         ph.c2 * ph.kernel * ph.kernel,
                                         mix_seed(seed, Stream::param_init, 1003));
        return b;
    }

    std::uint64_t checksum() const {
        std::uint64_t h = fnv1a64_span(frontend_w.data(), frontend_w.numel());
        h = fnv1a64_span(phi1_w.data(), phi1_w.numel(), h);
        return fnv1a64_span(phi2_w.data(), phi2_w.numel(), h);
    }
};

template <class T>
struct EncoderParams {
    NetConfig cfg;
    FeatureBank<T> bank;
    ParamStore<T> params;
    std::vector<BnStats<T>> bn;  // [0] front-end BN, then one per block
    bool frozen = false;

    void set_frozen(bool f) {
        frozen = f;
        params.set_frozen(f);
    }

    EncoderParams clone() const {
        EncoderParams e;
        e.cfg = cfg;
        e.bank = bank;  // bank tensors are immutable, sharing is fine
        e.params = params.clone();
        for (const auto& s : bn) e.bn.push_back(s.clone());
        e.frozen = frozen;
        return e;
    }
};

template <class T>
struct DecoderParams {
    NetConfig cfg;
    ParamStore<T> params;
    std::vector<BnStats<T>> bn;  // one per block

    DecoderParams clone() const {
        DecoderParams d;
        d.cfg = cfg;
        d.params = params.clone();
        for (const auto& s : bn) d.bn.push_back(s.clone());
        return d;
    }
};

// Enumerates running-stat buffers in a stable order for checkpointing.
template <class T>
void for_each_bn_buffer(std::vector<BnStats<T>>& bn, const std::string& prefix,
                        const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    for (std::size_t i = 0; i < bn.size(); ++i) {
        const std::string base = prefix + ".bn" + std::to_string(i);
        fn(base + ".running_mean", bn[i].running_mean);
        fn(base + ".running_var", bn[i].running_var);
        fn(base + ".count", bn[i].count);
    }
}

// Front-end filter bank conv + BN, then n_blocks of [conv3x3 stride 2 + ReLU
// + BN], then FC to voxel space. Front-end weights come frozen from the bank.
template <class T>
EncoderParams<T> build_encoder(const NetConfig& cfg, const FeatureBank<T>& bank,
                               std::uint64_t seed) {
    cfg.validate();
    EncoderParams<T> enc;
    enc.cfg = cfg;
    enc.bank = bank;
    const std::size_t EC = cfg.encoder_channels;

    enc.params.rng_seed = seed;
    enc.params.add("front.bn.gamma", Tensor<T>::filled({cfg.frontend.filters}, T(1)));
    enc.params.add("front.bn.beta", Tensor<T>::zeros({cfg.frontend.filters}));
    enc.bn.push_back(BnStats<T>::make(cfg.frontend.filters));

    std::size_t in_ch = cfg.frontend.filters;
    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
        const std::string p = "block" + std::to_string(b);
        enc.params.add(p + ".conv.w",
                       glorot_normal_init<T>({EC, in_ch, 3, 3}, in_ch * 9, EC * 9,
                                             mix_seed(seed, Stream::param_init, 10 + b)));
        enc.params.add(p + ".conv.b", Tensor<T>::zeros({EC}));
        enc.params.add(p + ".bn.gamma", Tensor<T>::filled({EC}, T(1)));
        enc.params.add(p + ".bn.beta", Tensor<T>::zeros({EC}));
        enc.bn.push_back(BnStats<T>::make(EC));
        in_ch = EC;
    }
    const std::size_t fc_in = cfg.encoder_fc_inputs();
    enc.params.add("fc.w", glorot_normal_init<T>({fc_in, cfg.voxel_count}, fc_in, cfg.voxel_count,
                                                 mix_seed(seed, Stream::param_init, 50)));
    enc.params.add("fc.b", Tensor<T>::zeros({cfg.voxel_count}));
    return enc;
}

// FC from voxel space to decoder_channels x base_side^2, then n_blocks of
// [conv3x3 stride 1 + ReLU, upsample2x, BN], then a conv to the output
// channels under a sigmoid.
template <class T>
DecoderParams<T> build_decoder(const NetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    DecoderParams<T> dec;
    dec.cfg = cfg;
    const std::size_t DC = cfg.decoder_channels;
    const std::size_t fc_out = DC * cfg.base_side * cfg.base_side;

    dec.params.rng_seed = seed;
    dec.params.add("fc.w", glorot_normal_init<T>({cfg.voxel_count, fc_out}, cfg.voxel_count,
                                                 fc_out, mix_seed(seed, Stream::param_init, 60)));
    dec.params.add("fc.b", Tensor<T>::zeros({fc_out}));
    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
        const std::string p = "block" + std::to_string(b);
        dec.params.add(p + ".conv.w",
                       glorot_normal_init<T>({DC, DC, 3, 3}, DC * 9, DC * 9,
                                             mix_seed(seed, Stream::param_init, 70 + b)));
        dec.params.add(p + ".conv.b", Tensor<T>::zeros({DC}));
        dec.params.add(p + ".bn.gamma", Tensor<T>::filled({DC}, T(1)));
        dec.params.add(p + ".bn.beta", Tensor<T>::zeros({DC}));
        dec.bn.push_back(BnStats<T>::make(DC));
    }
    dec.params.add("out.conv.w",
                   glorot_normal_init<T>({cfg.channels, DC, 3, 3}, DC * 9, cfg.channels * 9,
                                         mix_seed(seed, Stream::param_init, 90)));
    dec.params.add("out.conv.b", Tensor<T>::zeros({cfg.channels}));
    return dec;
}

template <class T>
Tensor<T> encode(EncoderParams<T>& enc, const Tensor<T>& images, Mode mode) {
    const auto& cfg = enc.cfg;
    if (images.shape().size() != 4 || images.dim(1) != cfg.channels ||
        images.dim(2) != cfg.image_side || images.dim(3) != cfg.image_side)
        throw ConfigError("encode: image batch " + shape_str(images.shape()) +
                          " does not match configured " + std::to_string(cfg.channels) + "x" +
                          std::to_string(cfg.image_side) + "x" + std::to_string(cfg.image_side));
    Tensor<T> h = conv2d(images, enc.bank.frontend_w, cfg.frontend.stride, cfg.frontend.pad);
    h = batch_norm(h, enc.params.get("front.bn.gamma"), enc.params.get("front.bn.beta"),
                   enc.bn[0], mode);
    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
        const std::string p = "block" + std::to_string(b);
        h = conv2d(h, enc.params.get(p + ".conv.w"), 2, 1);
        h = add_channel_bias(h, enc.params.get(p + ".conv.b"));
        h = relu(h);
        h = batch_norm(h, enc.params.get(p + ".bn.gamma"), enc.params.get(p + ".bn.beta"),
                       enc.bn[b + 1], mode);
    }
    h = reshape(h, {images.dim(0), cfg.encoder_fc_inputs()});
    return fully_connected(h, enc.params.get("fc.w"), enc.params.get("fc.b"));
}

template <class T>
Tensor<T> decode(DecoderParams<T>& dec, const Tensor<T>& voxels, Mode mode) {
    const auto& cfg = dec.cfg;
    if (voxels.shape().size() != 2 || voxels.dim(1) != cfg.voxel_count)
        throw ConfigError("decode: voxel batch " + shape_str(voxels.shape()) +
                          " does not match voxel_count " + std::to_string(cfg.voxel_count));
    const std::size_t N = voxels.dim(0);
    Tensor<T> h = fully_connected(voxels, dec.params.get("fc.w"), dec.params.get("fc.b"));
    h = reshape(h, {N, cfg.decoder_channels, cfg.base_side, cfg.base_side});
    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
        const std::string p = "block" + std::to_string(b);
        h = conv2d(h, dec.params.get(p + ".conv.w"), 1, 1);
        h = add_channel_bias(h, dec.params.get(p + ".conv.b"));
        h = relu(h);
        h = upsample2x(h);
        h = batch_norm(h, dec.params.get(p + ".bn.gamma"), dec.params.get(p + ".bn.beta"),
                       dec.bn[b], mode);
    }
    h = conv2d(h, dec.params.get("out.conv.w"), 1, 1);
    h = add_channel_bias(h, dec.params.get("out.conv.b"));
    return sigmoid(h);
}

// Activations of the two fixed conv+ReLU stages.
template <class T>
std::pair<Tensor<T>, Tensor<T>> feature_extract(const FeatureBank<T>& bank,
                                                const Tensor<T>& images) {
    if (images.shape().size() != 4 || images.dim(1) != bank.phi1_w.dim(1))
        throw ConfigError("feature_extract: image batch " + shape_str(images.shape()) +
                          " incompatible with feature bank");
    const std::size_t k = bank.phi1_w.dim(2);
    const std::size_t pad = (k - 1) / 2;
    Tensor<T> f1 = relu(conv2d(images, bank.phi1_w, 1, pad));
    Tensor<T> f2 = relu(conv2d(f1, bank.phi2_w, 1, pad));
    return {f1, f2};
}

}  // namespace vxc
