#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "vxc/rng.hpp"
#include "vxc/trainer.hpp"

namespace vxc {

// JSON <-> TrainConfig. Parsing starts from the defaults and overrides the
// keys present; unknown keys are rejected so typos cannot silently fall back
// to defaults. The canonical text is the fully-resolved config dumped with
// sorted keys, and the config hash is 64-bit FNV-1a over that text.

namespace config_detail {

using nlohmann::json;

inline void reject_unknown(const json& j, std::initializer_list<const char*> known,
                           const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok |= it.key() == k;
        if (!ok) throw ConfigError("unknown config key \"" + it.key() + "\" in " + where);
    }
}

template <class T>
void maybe(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for config key \"") + key + "\": " + e.what());
    }
}

}  // namespace config_detail

inline TrainConfig parse_train_config(const nlohmann::json& j) {
    using config_detail::maybe;
    using config_detail::reject_unknown;
    TrainConfig cfg;
    reject_unknown(j, {"seed", "net", "loss", "phase1", "phase2"}, "config root");
    maybe(j, "seed", cfg.seed);

    if (j.contains("net")) {
        const auto& n = j.at("net");
        reject_unknown(n,
                       {"image_side", "channels", "voxel_count", "base_side", "decoder_channels",
                        "encoder_channels", "n_blocks", "seed", "frontend", "phi"},
                       "net");
        maybe(n, "image_side", cfg.net.image_side);
        maybe(n, "channels", cfg.net.channels);
        maybe(n, "voxel_count", cfg.net.voxel_count);
        maybe(n, "base_side", cfg.net.base_side);
        maybe(n, "decoder_channels", cfg.net.decoder_channels);
        maybe(n, "encoder_channels", cfg.net.encoder_channels);
        maybe(n, "n_blocks", cfg.net.n_blocks);
        maybe(n, "seed", cfg.net.seed);
        if (n.contains("frontend")) {
            const auto& f = n.at("frontend");
            reject_unknown(f, {"filters", "kernel", "stride", "pad"}, "net.frontend");
            maybe(f, "filters", cfg.net.frontend.filters);
            maybe(f, "kernel", cfg.net.frontend.kernel);
            maybe(f, "stride", cfg.net.frontend.stride);
            maybe(f, "pad", cfg.net.frontend.pad);
        }
        if (n.contains("phi")) {
            const auto& p = n.at("phi");
            reject_unknown(p, {"c1", "c2", "kernel", "pad"}, "net.phi");
            maybe(p, "c1", cfg.net.phi.c1);
            maybe(p, "c2", cfg.net.phi.c2);
            maybe(p, "kernel", cfg.net.phi.kernel);
            maybe(p, "pad", cfg.net.phi.pad);
        }
    }
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        reject_unknown(
            l, {"alpha", "lambda_rgb", "lambda_feat", "lambda_tv", "lambda_d", "lambda_ed",
                "lambda_de"},
            "loss");
        maybe(l, "alpha", cfg.loss.alpha);
        maybe(l, "lambda_rgb", cfg.loss.lambda_rgb);
        maybe(l, "lambda_feat", cfg.loss.lambda_feat);
        maybe(l, "lambda_tv", cfg.loss.lambda_tv);
        maybe(l, "lambda_d", cfg.loss.lambda_d);
        maybe(l, "lambda_ed", cfg.loss.lambda_ed);
        maybe(l, "lambda_de", cfg.loss.lambda_de);
    }
    if (j.contains("phase1")) {
        const auto& p = j.at("phase1");
        reject_unknown(p, {"epochs", "lr", "momentum", "lr_overrides", "shift_max", "batch_size"},
                       "phase1");
        maybe(p, "epochs", cfg.phase1.epochs);
        maybe(p, "lr", cfg.phase1.lr);
        maybe(p, "momentum", cfg.phase1.momentum);
        maybe(p, "lr_overrides", cfg.phase1.lr_overrides);
        maybe(p, "shift_max", cfg.phase1.shift_max);
        maybe(p, "batch_size", cfg.phase1.batch_size);
    }
    if (j.contains("phase2")) {
        const auto& p = j.at("phase2");
        reject_unknown(p,
                       {"epochs", "lr", "drop_factor", "drop_every", "batch_size", "mix",
                        "enable_ed", "enable_de", "exclude_test_indices", "de_repeat_average",
                        "update_frozen_encoder_bn"},
                       "phase2");
        maybe(p, "epochs", cfg.phase2.epochs);
        maybe(p, "lr", cfg.phase2.lr);
        maybe(p, "drop_factor", cfg.phase2.drop_factor);
        maybe(p, "drop_every", cfg.phase2.drop_every);
        maybe(p, "batch_size", cfg.phase2.batch_size);
        maybe(p, "mix", cfg.phase2.mix);
        maybe(p, "enable_ed", cfg.phase2.enable_ed);
        maybe(p, "enable_de", cfg.phase2.enable_de);
        maybe(p, "exclude_test_indices", cfg.phase2.exclude_test_indices);
        maybe(p, "de_repeat_average", cfg.phase2.de_repeat_average);
        maybe(p, "update_frozen_encoder_bn", cfg.phase2.update_frozen_encoder_bn);
    }
    cfg.validate();
    return cfg;
}

inline TrainConfig parse_train_config_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed config JSON: ") + e.what());
    }
    return parse_train_config(j);
}

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["seed"] = cfg.seed;
    j["net"] = {{"image_side", cfg.net.image_side},
                {"channels", cfg.net.channels},
                {"voxel_count", cfg.net.voxel_count},
                {"base_side", cfg.net.base_side},
                {"decoder_channels", cfg.net.decoder_channels},
                {"encoder_channels", cfg.net.encoder_channels},
                {"n_blocks", cfg.net.n_blocks},
                {"seed", cfg.net.seed},
                {"frontend",
                 {{"filters", cfg.net.frontend.filters},
                  {"kernel", cfg.net.frontend.kernel},
                  {"stride", cfg.net.frontend.stride},
                  {"pad", cfg.net.frontend.pad}}},
                {"phi",
                 {{"c1", cfg.net.phi.c1},
                  {"c2", cfg.net.phi.c2},
                  {"kernel", cfg.net.phi.kernel},
                  {"pad", cfg.net.phi.pad}}}};
    j["loss"] = {{"alpha", cfg.loss.alpha},
                 {"lambda_rgb", cfg.loss.lambda_rgb},
                 {"lambda_feat", cfg.loss.lambda_feat},
                 {"lambda_tv", cfg.loss.lambda_tv},
                 {"lambda_d", cfg.loss.lambda_d},
                 {"lambda_ed", cfg.loss.lambda_ed},
                 {"lambda_de", cfg.loss.lambda_de}};
    j["phase1"] = {{"epochs", cfg.phase1.epochs},
                   {"lr", cfg.phase1.lr},
                   {"momentum", cfg.phase1.momentum},
                   {"lr_overrides", cfg.phase1.lr_overrides},
                   {"shift_max", cfg.phase1.shift_max},
                   {"batch_size", cfg.phase1.batch_size}};
    j["phase2"] = {{"epochs", cfg.phase2.epochs},
                   {"lr", cfg.phase2.lr},
                   {"drop_factor", cfg.phase2.drop_factor},
                   {"drop_every", cfg.phase2.drop_every},
                   {"batch_size", cfg.phase2.batch_size},
                   {"mix", cfg.phase2.mix},
                   {"enable_ed", cfg.phase2.enable_ed},
                   {"enable_de", cfg.phase2.enable_de},
                   {"exclude_test_indices", cfg.phase2.exclude_test_indices},
                   {"de_repeat_average", cfg.phase2.de_repeat_average},
                   {"update_frozen_encoder_bn", cfg.phase2.update_frozen_encoder_bn}};
    return j;
}

// Fully-resolved config as compact JSON with sorted keys.
inline std::string canonical_config_text(const TrainConfig& cfg) {
    return train_config_to_json(cfg).dump();
}

inline std::uint64_t config_hash(const TrainConfig& cfg) {
    const std::string text = canonical_config_text(cfg);
    return fnv1a64(text.data(), text.size());
}

}  // namespace vxc
