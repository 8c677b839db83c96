#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vxc/rng.hpp"
#include "vxc/tensor.hpp"

namespace vxc {

// Zero-mean normal with variance 2 / (fan_in + fan_out).
template <class T>
Tensor<T> glorot_normal_init(Shape shape, std::size_t fan_in, std::size_t fan_out,
                             std::uint64_t seed) {
    if (fan_in == 0 || fan_out == 0)
        throw ConfigError("glorot_normal_init: fans must be positive");
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    Rng rng(seed);
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(stddev * rng.normal());
    return Tensor<T>::from_vector(std::move(data), std::move(shape));
}

// Ordered collection of trainable tensors. Iteration order is the insertion
// order, which makes checkpoints and optimizer sweeps deterministic.
template <class T>
class ParamStore {
public:
    Tensor<T>& add(const std::string& name, Tensor<T> t) {
        if (index_.count(name)) throw ConfigError("ParamStore: duplicate parameter " + name);
        t.set_requires_grad(true);
        index_[name] = entries_.size();
        entries_.emplace_back(name, std::move(t));
        return entries_.back().second;
    }

    Tensor<T>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("ParamStore: unknown parameter " + name);
        return entries_[it->second].second;
    }
    const Tensor<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("ParamStore: unknown parameter " + name);
        return entries_[it->second].second;
    }
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    std::size_t size() const { return entries_.size(); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    void zero_grad() {
        for (auto& [name, t] : entries_) t.zero_grad();
    }

    // Freezing detaches the store from optimization: requires_grad drops so
    // no tape records through these tensors, and optimizer_step refuses them.
    void set_frozen(bool frozen) {
        frozen_ = frozen;
        for (auto& [name, t] : entries_) t.set_requires_grad(!frozen);
    }
    bool frozen() const { return frozen_; }

    std::uint64_t checksum() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& [name, t] : entries_) {
            h = fnv1a64(name.data(), name.size(), h);
            h = fnv1a64_span(t.data(), t.numel(), h);
        }
        return h;
    }

    // Deep copy: plain copies of the store would share tensor storage.
    ParamStore clone() const {
        ParamStore s;
        s.rng_seed = rng_seed;
        for (const auto& [name, t] : entries_) s.add(name, t.clone());
        s.set_frozen(frozen_);
        return s;
    }

    std::uint64_t rng_seed = 0;

private:
    std::vector<std::pair<std::string, Tensor<T>>> entries_;
    std::map<std::string, std::size_t> index_;
    bool frozen_ = false;
};

enum class OptKind { sgd, adam };

// Piecewise-constant schedule: initial_lr * drop_factor^floor(e / drop_every),
// unless an override table is present. The table holds (from_epoch, lr)
// milestones sorted by epoch; the last milestone at or before e wins.
struct LrSchedule {
    double initial_lr = 1e-3;
    double drop_factor = 1.0;
    int drop_every = 1;
    std::vector<std::pair<int, double>> overrides;
};

inline double lr_at(const LrSchedule& s, int epoch) {
    if (epoch < 0) throw ConfigError("lr_at: epoch must be >= 0");
    if (!s.overrides.empty()) {
        double lr = s.initial_lr;
        for (const auto& [from, v] : s.overrides)
            if (epoch >= from) lr = v;
        return lr;
    }
    if (s.drop_every <= 0) throw ConfigError("lr_at: drop_every must be positive");
    if (!(s.drop_factor > 0.0 && s.drop_factor <= 1.0))
        throw ConfigError("lr_at: drop_factor must lie in (0,1]");
    return s.initial_lr * std::pow(s.drop_factor, epoch / s.drop_every);
}

// SGD with classic momentum, or Adam with bias-corrected moments.
template <class T>
class OptimizerState {
public:
    static OptimizerState sgd(T lr, T momentum = T(0)) {
        OptimizerState s;
        s.kind_ = OptKind::sgd;
        s.lr_ = lr;
        s.momentum_ = momentum;
        return s;
    }
    static OptimizerState adam(T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8)) {
        OptimizerState s;
        s.kind_ = OptKind::adam;
        s.lr_ = lr;
        s.beta1_ = beta1;
        s.beta2_ = beta2;
        s.eps_ = eps;
        return s;
    }

    OptKind kind() const { return kind_; }
    T lr() const { return lr_; }
    void set_lr(T lr) { lr_ = lr; }
    std::int64_t step_count() const { return step_count_; }

    void step(ParamStore<T>& params) {
        if (params.frozen()) throw ConfigError("optimizer_step: parameter store is frozen");
        ++step_count_;
        for (auto& [name, t] : params) {
            if (!t.has_grad())
                throw ConfigError("optimizer_step: no gradient populated for parameter " + name);
            auto& m = moments_[name];
            if (m.m1.size() != t.numel()) {
                m.m1.assign(t.numel(), T(0));
                if (kind_ == OptKind::adam) m.m2.assign(t.numel(), T(0));
            }
            const std::vector<T>& g = t.grad();
            T* w = t.data();
            if (kind_ == OptKind::sgd) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    m.m1[i] = momentum_ * m.m1[i] + g[i];
                    w[i] -= lr_ * m.m1[i];
                }
            } else {
                const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(step_count_));
                const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(step_count_));
                for (std::size_t i = 0; i < g.size(); ++i) {
                    m.m1[i] = beta1_ * m.m1[i] + (T(1) - beta1_) * g[i];
                    m.m2[i] = beta2_ * m.m2[i] + (T(1) - beta2_) * g[i] * g[i];
                    const T mhat = m.m1[i] / bc1;
                    const T vhat = m.m2[i] / bc2;
                    w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
                }
            }
        }
    }

    // Serialization hooks for checkpoints.
    struct Moments {
        std::vector<T> m1, m2;
    };
    std::map<std::string, Moments>& moments() { return moments_; }
    const std::map<std::string, Moments>& moments() const { return moments_; }
    void set_step_count(std::int64_t n) { step_count_ = n; }
    T momentum() const { return momentum_; }
    T beta1() const { return beta1_; }
    T beta2() const { return beta2_; }
    T eps() const { return eps_; }

private:
    OptKind kind_ = OptKind::sgd;
    T lr_ = T(0.01);
    T momentum_ = T(0);
    T beta1_ = T(0.9), beta2_ = T(0.999), eps_ = T(1e-8);
    std::int64_t step_count_ = 0;
    std::map<std::string, Moments> moments_;
};

}  // namespace vxc
