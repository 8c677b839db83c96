#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "vxc/counters.hpp"
#include "vxc/cortexsim.hpp"
#include "vxc/io.hpp"
#include "vxc/objectives.hpp"
#include "vxc/optim.hpp"

namespace vxc {

struct Phase1Config {
    int epochs = 80;
    double lr = 0.1;
    double momentum = 0.9;
    // step decay x0.1 at epochs 40 and 60 under the 80-epoch default
    std::vector<std::pair<int, double>> lr_overrides = {{40, 0.01}, {60, 0.001}};
    int shift_max = 2;
    int batch_size = 64;

    LrSchedule schedule() const {
        LrSchedule s;
        s.initial_lr = lr;
        s.overrides = lr_overrides;
        return s;
    }
};

struct Phase2Config {
    int epochs = 150;
    double lr = 1e-3;
    double drop_factor = 0.2;  // 80% drop
    int drop_every = 30;
    int batch_size = 64;
    std::array<double, 3> mix = {0.6, 0.2, 0.2};  // paired, unlabeled images, unlabeled fmri
    bool enable_ed = true;
    bool enable_de = true;
    std::vector<std::size_t> exclude_test_indices;  // omitted from the D-E pool
    bool de_repeat_average = true;   // feed repeat-averaged test responses to D-E
    bool update_frozen_encoder_bn = false;

    LrSchedule schedule() const {
        LrSchedule s;
        s.initial_lr = lr;
        s.drop_factor = drop_factor;
        s.drop_every = drop_every;
        return s;
    }
};

struct TrainConfig {
    NetConfig net;
    LossWeights loss;
    Phase1Config phase1;
    Phase2Config phase2;
    std::uint64_t seed = 1;

    void validate() const {
        net.validate();
        loss.validate();
        if (phase1.epochs < 1 || phase2.epochs < 1)
            throw ConfigError("TrainConfig: epochs must be >= 1");
        if (phase1.batch_size < 1 || phase2.batch_size < 1)
            throw ConfigError("TrainConfig: batch sizes must be >= 1");
        if (phase1.shift_max < 0 ||
            static_cast<std::size_t>(phase1.shift_max) * 4 >= net.image_side)
            throw ConfigError("TrainConfig: shift_max must satisfy shift_max < image_side/4");
        double sum = 0;
        for (double f : phase2.mix) {
            if (f < 0) throw ConfigError("TrainConfig: mix fractions must be nonnegative");
            sum += f;
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw ConfigError("TrainConfig: mix fractions must sum to 1");
    }
};

// ---------------------------------------------------------------------------
// Batch mixing
// ---------------------------------------------------------------------------

// Largest-remainder rounding of fractions * batch_size; sizes always sum to
// batch_size, remainder ties broken toward the lower index.
inline std::array<std::size_t, 3> mix_sizes(std::size_t batch_size,
                                            const std::array<double, 3>& fractions) {
    if (batch_size < 1) throw ConfigError("mix_sizes: batch_size must be >= 1");
    double sum = 0;
    for (double f : fractions) {
        if (f < 0 || !std::isfinite(f)) throw ConfigError("mix_sizes: bad fraction");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("mix_sizes: fractions must sum to 1");

    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double exact = fractions[i] * static_cast<double>(batch_size);
        sizes[i] = static_cast<std::size_t>(exact);
        rem[i] = exact - static_cast<double>(sizes[i]);
        assigned += sizes[i];
    }
    while (assigned < batch_size) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < 3; ++i)
            if (rem[i] > rem[best]) best = i;
        ++sizes[best];
        rem[best] = -1.0;
        ++assigned;
    }
    return sizes;
}

// Draws without replacement from a pool, reshuffling on exhaustion. The
// permutation for (epoch, cycle) is a pure function of the seed, so resuming
// at an epoch boundary replays the identical stream.
class PoolCycler {
public:
    PoolCycler(std::size_t pool_size, std::uint64_t seed, std::uint64_t tag)
        : size_(pool_size), seed_(seed), tag_(tag) {}

    void start_epoch(int epoch) {
        epoch_ = epoch;
        cycle_ = 0;
        cursor_ = 0;
        reshuffle();
    }

    std::vector<std::size_t> draw(std::size_t n) {
        std::vector<std::size_t> out;
        out.reserve(n);
        while (out.size() < n) {
            if (cursor_ >= perm_.size()) {
                ++cycle_;
                cursor_ = 0;
                reshuffle();
            }
            out.push_back(perm_[cursor_++]);
        }
        return out;
    }

    std::size_t pool_size() const { return size_; }

private:
    void reshuffle() {
        Rng rng(mix_seed(seed_, Stream::shuffle, tag_ * 1000003ull + static_cast<std::uint64_t>(epoch_),
                         cycle_));
        perm_ = rng.permutation(size_);
    }

    std::size_t size_, cursor_ = 0;
    std::uint64_t seed_, tag_;
    int epoch_ = 0;
    std::uint64_t cycle_ = 0;
    std::vector<std::size_t> perm_;
};

// ---------------------------------------------------------------------------
// Random shift augmentation (phase 1)
// ---------------------------------------------------------------------------

namespace detail {

// Integer translation with zero fill: source pixel (x, y) lands at
// (x + dx, y + dy).
inline void shift_into(float* dst, const float* src, std::size_t C, std::size_t H, std::size_t W,
                       int dx, int dy) {
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) - dx;
                const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) - dy;
                dst[(c * H + y) * W + x] =
                    (sx < 0 || sy < 0 || sx >= static_cast<std::ptrdiff_t>(W) ||
                     sy >= static_cast<std::ptrdiff_t>(H))
                        ? 0.f
                        : src[(c * H + static_cast<std::size_t>(sy)) * W +
                              static_cast<std::size_t>(sx)];
            }
}

}  // namespace detail

// Uniform integer shift on [-shift_max, shift_max]^2, zero-filled, seeded.
inline Tensor<float> random_shift(const Tensor<float>& image, int shift_max, std::uint64_t seed) {
    if (image.shape().size() != 3)
        throw ConfigError("random_shift: expected CHW image, got " + shape_str(image.shape()));
    const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
    if (shift_max < 0 || static_cast<std::size_t>(shift_max) * 4 >= std::min(H, W))
        throw ConfigError("random_shift: shift_max must satisfy shift_max < image_side/4");
    Rng rng(seed);
    const int dx = static_cast<int>(rng.uniform_int(-shift_max, shift_max));
    const int dy = static_cast<int>(rng.uniform_int(-shift_max, shift_max));
    Tensor<float> out = Tensor<float>::zeros(image.shape());
    detail::shift_into(out.data(), image.data(), C, H, W, dx, dy);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

// Full training state at an epoch boundary. The canonical config text rides
// along; its hash guards resumes against mismatched configs.
struct Checkpoint {
    std::uint32_t phase = 0;  // 1 = encoder, 2 = decoder
    std::uint32_t epochs_completed = 0;
    std::string config_text;
    std::vector<NamedArray> encoder;
    std::vector<NamedArray> decoder;
    std::vector<NamedArray> optimizer;

    std::uint64_t config_hash() const {
        return fnv1a64(config_text.data(), config_text.size());
    }
};

namespace detail {

inline void write_section(std::ofstream& os, const std::vector<NamedArray>& arrays) {
    io_detail::write_u32(os, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        io_detail::write_string(os, a.name);
        io_detail::write_u32(os, static_cast<std::uint32_t>(a.shape.size()));
        for (std::size_t d : a.shape) io_detail::write_u32(os, static_cast<std::uint32_t>(d));
        io_detail::write_bytes(os, a.data.data(), a.data.size() * sizeof(float));
    }
}

inline std::vector<NamedArray> read_section(std::ifstream& is) {
    const auto count = io_detail::read_u32(is, "section count");
    std::vector<NamedArray> arrays(count);
    for (auto& a : arrays) {
        a.name = io_detail::read_string(is, "array name");
        const auto ndim = io_detail::read_u32(is, "array rank");
        if (ndim > 8) throw DataError("implausible array rank in checkpoint");
        a.shape.resize(ndim);
        for (auto& d : a.shape) d = io_detail::read_u32(is, "array dims");
        a.data.resize(shape_numel(a.shape));
        io_detail::read_bytes(is, a.data.data(), a.data.size() * sizeof(float), a.name);
    }
    return arrays;
}

template <class Net>
std::vector<NamedArray> snapshot_net(Net& net, const std::string& prefix) {
    std::vector<NamedArray> out;
    for (auto& [name, t] : net.params)
        out.push_back({prefix + "." + name, t.shape(), t.values()});
    for_each_bn_buffer<float>(net.bn, prefix, [&](const std::string& name, Tensor<float>& t) {
        out.push_back({name, t.shape(), t.values()});
    });
    return out;
}

template <class Net>
void restore_net(Net& net, const std::vector<NamedArray>& arrays, const std::string& prefix) {
    std::size_t idx = 0;
    auto take = [&](const std::string& name, Tensor<float>& t) {
        if (idx >= arrays.size() || arrays[idx].name != name || arrays[idx].shape != t.shape())
            throw DataError("checkpoint mismatch at " + name);
        t.values() = arrays[idx].data;
        ++idx;
    };
    for (auto& [name, t] : net.params) take(prefix + "." + name, t);
    for_each_bn_buffer<float>(net.bn, prefix,
                              [&](const std::string& name, Tensor<float>& t) { take(name, t); });
    if (idx != arrays.size()) throw DataError("checkpoint has extra arrays for " + prefix);
}

inline std::vector<NamedArray> snapshot_optimizer(const OptimizerState<float>& opt,
                                                  const ParamStore<float>& params) {
    std::vector<NamedArray> out;
    out.push_back({"step_count",
                   {1},
                   {static_cast<float>(opt.step_count())}});
    for (const auto& [name, t] : params) {
        auto it = opt.moments().find(name);
        const bool have = it != opt.moments().end() && it->second.m1.size() == t.numel();
        out.push_back({"m1." + name, t.shape(),
                       have ? it->second.m1 : std::vector<float>(t.numel(), 0.f)});
        if (opt.kind() == OptKind::adam)
            out.push_back({"m2." + name, t.shape(),
                           have && it->second.m2.size() == t.numel()
                               ? it->second.m2
                               : std::vector<float>(t.numel(), 0.f)});
    }
    return out;
}

inline void restore_optimizer(OptimizerState<float>& opt, const ParamStore<float>& params,
                              const std::vector<NamedArray>& arrays) {
    if (arrays.empty() || arrays[0].name != "step_count")
        throw DataError("checkpoint optimizer section malformed");
    opt.set_step_count(static_cast<std::int64_t>(arrays[0].data[0]));
    std::size_t idx = 1;
    auto take = [&](const std::string& name, std::vector<float>& dst, std::size_t n) {
        if (idx >= arrays.size() || arrays[idx].name != name || arrays[idx].data.size() != n)
            throw DataError("checkpoint mismatch at optimizer " + name);
        dst = arrays[idx].data;
        ++idx;
    };
    for (const auto& [name, t] : params) {
        auto& m = opt.moments()[name];
        take("m1." + name, m.m1, t.numel());
        if (opt.kind() == OptKind::adam) take("m2." + name, m.m2, t.numel());
    }
    if (idx != arrays.size()) throw DataError("checkpoint has extra optimizer arrays");
}

}  // namespace detail

// Versioned binary checkpoint; save -> load round trips are byte-exact.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    os.write("VXCK", 4);
    io_detail::write_u32(os, 1);  // format version
    io_detail::write_u64(os, ck.config_hash());
    io_detail::write_u32(os, ck.phase);
    io_detail::write_u32(os, ck.epochs_completed);
    io_detail::write_string(os, ck.config_text);
    detail::write_section(os, ck.encoder);
    detail::write_section(os, ck.decoder);
    detail::write_section(os, ck.optimizer);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path.string());
    char magic[4];
    io_detail::read_bytes(is, magic, 4, "magic");
    if (std::memcmp(magic, "VXCK", 4) != 0)
        throw DataError("bad checkpoint magic in " + path.string());
    const auto version = io_detail::read_u32(is, "version");
    if (version != 1) throw DataError("unsupported checkpoint version");
    Checkpoint ck;
    const auto stored_hash = io_detail::read_u64(is, "config hash");
    ck.phase = io_detail::read_u32(is, "phase");
    ck.epochs_completed = io_detail::read_u32(is, "epoch");
    ck.config_text = io_detail::read_string(is, "config text");
    if (ck.config_hash() != stored_hash)
        throw DataError("checkpoint config hash does not match its config text");
    ck.encoder = detail::read_section(is);
    ck.decoder = detail::read_section(is);
    ck.optimizer = detail::read_section(is);
    char extra;
    if (is.read(&extra, 1) && is.gcount() == 1)
        throw DataError("trailing bytes in " + path.string());
    return ck;
}

// Refuses to apply a checkpoint produced under a different config.
inline void ensure_checkpoint_config(const Checkpoint& ck, const std::string& config_text) {
    if (ck.config_text != config_text)
        throw ConfigError("checkpoint was produced under a different config (hash " +
                          std::to_string(ck.config_hash()) + " vs " +
                          std::to_string(fnv1a64(config_text.data(), config_text.size())) + ")");
}

// ---------------------------------------------------------------------------
// Phase 1: supervised encoder training with random-shift augmentation
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor<float> gather_rows(const Tensor<float>& src, const std::vector<std::size_t>& idx) {
    Shape shape = src.shape();
    const std::size_t row = src.numel() / shape[0];
    shape[0] = idx.size();
    std::vector<float> out(idx.size() * row);
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(src.data() + idx[i] * row, src.data() + (idx[i] + 1) * row,
                  out.begin() + i * row);
    return Tensor<float>::from_vector(std::move(out), std::move(shape));
}

}  // namespace detail

class EncoderTrainer {
public:
    EncoderTrainer(const Cohort& cohort, const TrainConfig& cfg)
        : cohort_(cohort.masked()), cfg_(cfg), opt_(OptimizerState<float>::sgd(
                                                    static_cast<float>(cfg.phase1.lr),
                                                    static_cast<float>(cfg.phase1.momentum))) {
        cfg_.validate();
        if (cohort_.n_train() == 0) throw ConfigError("EncoderTrainer: empty train set");
        if (cfg_.net.voxel_count != cohort_.voxel_count)
            throw ConfigError("EncoderTrainer: config voxel_count " +
                              std::to_string(cfg_.net.voxel_count) + " != cohort kept voxels " +
                              std::to_string(cohort_.voxel_count));
        auto bank = FeatureBank<float>::make(cfg_.net, cfg_.net.seed);
        enc_ = build_encoder<float>(cfg_.net, bank, mix_seed(cfg_.seed, Stream::param_init, 1));
    }

    int epoch() const { return epoch_; }
    double last_epoch_loss() const { return last_loss_; }
    EncoderParams<float>& encoder() { return enc_; }

    void run_epoch() {
        const auto& p1 = cfg_.phase1;
        opt_.set_lr(static_cast<float>(lr_at(p1.schedule(), epoch_)));
        const std::size_t n = cohort_.n_train();
        const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(p1.batch_size), n);
        const std::size_t steps = n / bs;  // drop the final partial batch

        Rng shuffle_rng(mix_seed(cfg_.seed, Stream::shuffle, 1, epoch_));
        const auto perm = shuffle_rng.permutation(n);

        const std::size_t C = cohort_.channels, S = cohort_.image_side;
        double loss_sum = 0;
        for (std::size_t step = 0; step < steps; ++step) {
            std::vector<float> imgs(bs * C * S * S);
            std::vector<std::size_t> rows(perm.begin() + step * bs,
                                          perm.begin() + (step + 1) * bs);
            for (std::size_t i = 0; i < bs; ++i) {
                const float* src = cohort_.train_images.data() + rows[i] * C * S * S;
                if (p1.shift_max > 0) {
                    Rng rng(mix_seed(cfg_.seed, Stream::shift, epoch_, rows[i]));
                    const int dx = static_cast<int>(rng.uniform_int(-p1.shift_max, p1.shift_max));
                    const int dy = static_cast<int>(rng.uniform_int(-p1.shift_max, p1.shift_max));
                    detail::shift_into(imgs.data() + i * C * S * S, src, C, S, S, dx, dy);
                } else {
                    std::copy(src, src + C * S * S, imgs.begin() + i * C * S * S);
                }
            }
            auto s = Tensor<float>::from_vector(std::move(imgs), {bs, C, S, S});
            auto r = detail::gather_rows(cohort_.train_fmri, rows);

            enc_.params.zero_grad();
            auto rhat = encode(enc_, s, Mode::train);
            auto loss = fmri_pair_loss(rhat, r, static_cast<float>(cfg_.loss.alpha));
            if (!loss.all_finite()) throw DataError("encoder training loss went non-finite");
            loss_sum += loss.item();
            backward(loss);
            opt_.step(enc_.params);
        }
        last_loss_ = steps ? loss_sum / static_cast<double>(steps) : 0.0;
        ++epoch_;
    }

    Checkpoint make_checkpoint(const std::string& config_text) const {
        Checkpoint ck;
        ck.phase = 1;
        ck.epochs_completed = static_cast<std::uint32_t>(epoch_);
        ck.config_text = config_text;
        ck.encoder = detail::snapshot_net(const_cast<EncoderParams<float>&>(enc_), "enc");
        ck.optimizer = detail::snapshot_optimizer(opt_, enc_.params);
        return ck;
    }

    void load_state(const Checkpoint& ck, const std::string& config_text) {
        ensure_checkpoint_config(ck, config_text);
        if (ck.phase != 1) throw ConfigError("expected a phase-1 checkpoint");
        detail::restore_net(enc_, ck.encoder, "enc");
        detail::restore_optimizer(opt_, enc_.params, ck.optimizer);
        epoch_ = static_cast<int>(ck.epochs_completed);
    }

    // Freezes the encoder and hands it over.
    EncoderParams<float> finish() {
        enc_.set_frozen(true);
        return enc_;
    }

private:
    Cohort cohort_;
    TrainConfig cfg_;
    EncoderParams<float> enc_;
    OptimizerState<float> opt_;
    int epoch_ = 0;
    double last_loss_ = 0;
};

inline EncoderParams<float> train_encoder(const Cohort& cohort, const TrainConfig& cfg) {
    EncoderTrainer t(cohort, cfg);
    for (int e = 0; e < cfg.phase1.epochs; ++e) t.run_epoch();
    return t.finish();
}

// ---------------------------------------------------------------------------
// Phase 2: decoder training on mixed batches with the encoder frozen
// ---------------------------------------------------------------------------

class DecoderTrainer {
public:
    DecoderTrainer(const Cohort& cohort, const EncoderParams<float>& frozen_encoder,
                   const TrainConfig& cfg)
        : cohort_(cohort.masked()),
          cfg_(cfg),
          enc_(frozen_encoder.clone()),
          opt_(OptimizerState<float>::adam(static_cast<float>(cfg.phase2.lr))) {
        cfg_.validate();
        if (!frozen_encoder.frozen)
            throw ConfigError("DecoderTrainer: encoder must be frozen before phase 2");
        enc_.set_frozen(true);
        const auto& p2 = cfg_.phase2;

        const bool d_on = cfg_.loss.lambda_d != 0.0;
        const bool ed_on = p2.enable_ed && cfg_.loss.lambda_ed != 0.0;
        const bool de_on = p2.enable_de && cfg_.loss.lambda_de != 0.0;
        if (!d_on && !ed_on && !de_on)
            throw ConfigError("DecoderTrainer: all loss terms are disabled");

        // Disabled terms give their batch share back to the enabled ones.
        std::array<double, 3> mix = p2.mix;
        if (!d_on) mix[0] = 0;
        if (!ed_on) mix[1] = 0;
        if (!de_on) mix[2] = 0;
        double sum = mix[0] + mix[1] + mix[2];
        if (sum <= 0) throw ConfigError("DecoderTrainer: effective batch mix is empty");
        for (auto& f : mix) f /= sum;
        sizes_ = mix_sizes(static_cast<std::size_t>(p2.batch_size), mix);
        if (sizes_[0] == 0 && d_on)
            throw ConfigError("DecoderTrainer: paired share rounds to zero; raise batch size");

        if (sizes_[0] > 0 && cohort_.n_train() == 0)
            throw ConfigError("DecoderTrainer: paired fraction nonzero but train set empty");
        if (sizes_[1] > 0 && cohort_.n_unlabeled() == 0)
            throw ConfigError("DecoderTrainer: image fraction nonzero but unlabeled pool empty");

        // D-E pool: test responses, repeat-averaged by default, minus the
        // excluded stimuli.
        excluded_.insert(p2.exclude_test_indices.begin(), p2.exclude_test_indices.end());
        for (std::size_t t : excluded_)
            if (t >= cohort_.n_test())
                throw ConfigError("DecoderTrainer: excluded test index out of range");
        if (p2.de_repeat_average) {
            auto avg = average_repeats(cohort_.test_fmri_repeats);
            de_pool_rows_ = build_de_pool(avg, 1);
            de_pool_ = std::move(avg);
        } else {
            const std::size_t T = cohort_.n_test(), m = cohort_.repeats;
            de_pool_ = reshape(cohort_.test_fmri_repeats, {T * m, cohort_.voxel_count});
            de_pool_rows_ = build_de_pool(de_pool_, m);
        }
        if (sizes_[2] > 0 && de_pool_rows_.empty())
            throw ConfigError("DecoderTrainer: fmri fraction nonzero but D-E pool empty");

        dec_ = build_decoder<float>(cfg_.net, mix_seed(cfg_.seed, Stream::param_init, 2));
        paired_pool_ = std::make_unique<PoolCycler>(cohort_.n_train(), cfg_.seed, 10);
        image_pool_ = std::make_unique<PoolCycler>(cohort_.n_unlabeled(), cfg_.seed, 11);
        fmri_pool_ = std::make_unique<PoolCycler>(de_pool_rows_.size(), cfg_.seed, 12);
    }

    int epoch() const { return epoch_; }
    double last_epoch_loss() const { return last_loss_; }
    DecoderParams<float>& decoder() { return dec_; }
    const EncoderParams<float>& encoder() const { return enc_; }

    void run_epoch() {
        const auto& p2 = cfg_.phase2;
        opt_.set_lr(static_cast<float>(lr_at(p2.schedule(), epoch_)));

        // one epoch = one pass over the paired pool (or one nominal pass of
        // batches when the paired slice is disabled)
        const std::size_t steps =
            sizes_[0] > 0 ? std::max<std::size_t>(1, cohort_.n_train() / sizes_[0])
                          : std::max<std::size_t>(1, de_pool_rows_.size() / std::max<std::size_t>(
                                                         1, sizes_[2]));
        paired_pool_->start_epoch(epoch_);
        image_pool_->start_epoch(epoch_);
        fmri_pool_->start_epoch(epoch_);

        const Mode enc_mode = p2.update_frozen_encoder_bn ? Mode::train : Mode::eval;
        double loss_sum = 0;
        for (std::size_t step = 0; step < steps; ++step) {
            Tensor<float> ps = Tensor<float>::zeros({0});
            Tensor<float> pr = Tensor<float>::zeros({0});
            Tensor<float> us = Tensor<float>::zeros({0});
            Tensor<float> ur = Tensor<float>::zeros({0});
            if (sizes_[0] > 0) {
                const auto rows = paired_pool_->draw(sizes_[0]);
                ps = detail::gather_rows(cohort_.train_images, rows);
                pr = detail::gather_rows(cohort_.train_fmri, rows);
            }
            if (sizes_[1] > 0)
                us = detail::gather_rows(cohort_.unlabeled_images, image_pool_->draw(sizes_[1]));
            if (sizes_[2] > 0) {
                auto rows = fmri_pool_->draw(sizes_[2]);
                for (auto& rw : rows) {
                    rw = de_pool_rows_[rw];
                    // excluded responses must never reach a D-E batch
                    counters::de_exclusion_checks().fetch_add(1, std::memory_order_relaxed);
                    const std::size_t stim = cfg_.phase2.de_repeat_average
                                                 ? rw
                                                 : rw / cohort_.repeats;
                    if (excluded_.count(stim))
                        throw std::logic_error("excluded test response drawn for D-E batch");
                }
                ur = detail::gather_rows(de_pool_, rows);
            }

            dec_.params.zero_grad();
            auto loss = decoder_objective(enc_, dec_, ps, pr, us, ur, cfg_.loss, enc_mode,
                                          Mode::train);
            if (!loss.all_finite()) throw DataError("decoder training loss went non-finite");
            loss_sum += loss.item();
            backward(loss);
            opt_.step(dec_.params);
        }
        last_loss_ = steps ? loss_sum / static_cast<double>(steps) : 0.0;
        ++epoch_;
    }

    Checkpoint make_checkpoint(const std::string& config_text) const {
        Checkpoint ck;
        ck.phase = 2;
        ck.epochs_completed = static_cast<std::uint32_t>(epoch_);
        ck.config_text = config_text;
        ck.encoder = detail::snapshot_net(const_cast<EncoderParams<float>&>(enc_), "enc");
        ck.decoder = detail::snapshot_net(const_cast<DecoderParams<float>&>(dec_), "dec");
        ck.optimizer = detail::snapshot_optimizer(opt_, dec_.params);
        return ck;
    }

    void load_state(const Checkpoint& ck, const std::string& config_text) {
        ensure_checkpoint_config(ck, config_text);
        if (ck.phase != 2) throw ConfigError("expected a phase-2 checkpoint");
        detail::restore_net(enc_, ck.encoder, "enc");
        detail::restore_net(dec_, ck.decoder, "dec");
        detail::restore_optimizer(opt_, dec_.params, ck.optimizer);
        epoch_ = static_cast<int>(ck.epochs_completed);
    }

    DecoderParams<float> finish() { return dec_; }

private:
    std::vector<std::size_t> build_de_pool(const Tensor<float>& pool, std::size_t per_stim) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < pool.dim(0); ++i) {
            const std::size_t stim = i / per_stim;
            if (!excluded_.count(stim)) rows.push_back(i);
        }
        return rows;
    }

    Cohort cohort_;
    TrainConfig cfg_;
    EncoderParams<float> enc_;
    DecoderParams<float> dec_;
    OptimizerState<float> opt_;
    std::array<std::size_t, 3> sizes_{};
    Tensor<float> de_pool_;
    std::vector<std::size_t> de_pool_rows_;
    std::set<std::size_t> excluded_;
    std::unique_ptr<PoolCycler> paired_pool_, image_pool_, fmri_pool_;
    int epoch_ = 0;
    double last_loss_ = 0;
};

inline DecoderParams<float> train_decoder(const Cohort& cohort,
                                          const EncoderParams<float>& frozen_encoder,
                                          const TrainConfig& cfg) {
    DecoderTrainer t(cohort, frozen_encoder, cfg);
    for (int e = 0; e < cfg.phase2.epochs; ++e) t.run_epoch();
    return t.finish();
}

// Feeds test responses through the trained decoder, eval mode, no tape.
inline Tensor<float> reconstruct(DecoderParams<float>& dec, const Tensor<float>& test_fmri) {
    if (test_fmri.shape().size() != 2 || test_fmri.dim(1) != dec.cfg.voxel_count)
        throw ConfigError("reconstruct: responses " + shape_str(test_fmri.shape()) +
                          " do not match voxel_count " + std::to_string(dec.cfg.voxel_count));
    NoGradGuard ng;
    return decode(dec, test_fmri, Mode::eval);
}

}  // namespace vxc
