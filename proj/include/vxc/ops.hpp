#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "vxc/counters.hpp"
#include "vxc/tensor.hpp"

namespace vxc {

enum class Mode { train, eval };

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
    return detail::record<T>(x.shape(), std::move(out), {x.node()}, [&] {
        auto xn = x.node();
        return [xn](const std::vector<T>& g, const std::vector<std::vector<T>*>& gin) {
            if (!gin[0]) return;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (xn->value[i] > T(0)) (*gin[0])[i] += g[i];
        };
    });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = x.data()[i];
        out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                           : std::exp(v) / (T(1) + std::exp(v));
    }
    Shape shape = x.shape();
    std::vector<T> saved = out;
    return detail::record<T>(std::move(shape), std::move(out), {x.node()}, [&] {
        return [s = std::move(saved)](const std::vector<T>& g,
                                      const std::vector<std::vector<T>*>& gin) {
            if (!gin[0]) return;
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * s[i] * (T(1) - s[i]);
        };
    });
}

// ---------------------------------------------------------------------------
// Convolution (NCHW input, OIKK kernel) via im2col + GEMM
// ---------------------------------------------------------------------------

namespace detail {

// cols[(I*K*K) x (Ho*Wo)] for one sample.
template <class T>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W, std::size_t K,
            std::size_t stride, std::size_t pad, std::size_t Ho, std::size_t Wo, T* cols) {
    const std::size_t P = Ho * Wo;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t ky = 0; ky < K; ++ky)
            for (std::size_t kx = 0; kx < K; ++kx) {
                T* row = cols + ((c * K + ky) * K + kx) * P;
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * stride + ky) -
                        static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) {
                        for (std::size_t ox = 0; ox < Wo; ++ox) row[oy * Wo + ox] = T(0);
                        continue;
                    }
                    const T* src = x + (c * H + static_cast<std::size_t>(iy)) * W;
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * stride + kx) -
                            static_cast<std::ptrdiff_t>(pad);
                        row[oy * Wo + ox] =
                            (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W))
                                ? T(0)
                                : src[static_cast<std::size_t>(ix)];
                    }
                }
            }
}

// Scatter-add of dcols back into the (padded) input gradient.
template <class T>
void col2im_add(const T* dcols, std::size_t C, std::size_t H, std::size_t W, std::size_t K,
                std::size_t stride, std::size_t pad, std::size_t Ho, std::size_t Wo, T* dx) {
    const std::size_t P = Ho * Wo;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t ky = 0; ky < K; ++ky)
            for (std::size_t kx = 0; kx < K; ++kx) {
                const T* row = dcols + ((c * K + ky) * K + kx) * P;
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * stride + ky) -
                        static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                    T* dst = dx + (c * H + static_cast<std::size_t>(iy)) * W;
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * stride + kx) -
                            static_cast<std::ptrdiff_t>(pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                        dst[static_cast<std::size_t>(ix)] += row[oy * Wo + ox];
                    }
                }
            }
}

}  // namespace detail

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride,
                                std::size_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t pad) {
    if (x.shape().size() != 4 || w.shape().size() != 4)
        throw ConfigError("conv2d: expected NCHW input and OIKK kernel, got " +
                          shape_str(x.shape()) + " and " + shape_str(w.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = w.dim(0), I = w.dim(1), Kh = w.dim(2), Kw = w.dim(3);
    if (I != C)
        throw ConfigError("conv2d: input has " + std::to_string(C) + " channels but kernel wants " +
                          std::to_string(I));
    if (Kh != Kw) throw ConfigError("conv2d: only square kernels supported");
    if (stride == 0) throw ConfigError("conv2d: stride must be positive");
    if (Kh > H + 2 * pad || Kw > W + 2 * pad)
        throw ConfigError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                          shape_str(x.shape()) + " with pad " + std::to_string(pad));
    const std::size_t K = Kh;
    const std::size_t Ho = conv_out_dim(H, K, stride, pad);
    const std::size_t Wo = conv_out_dim(W, K, stride, pad);
    const std::size_t P = Ho * Wo, R = C * K * K;

    std::vector<T> out(N * O * P);
    std::vector<T> cols(R * P);
    for (std::size_t n = 0; n < N; ++n) {
        detail::im2col(x.data() + n * C * H * W, C, H, W, K, stride, pad, Ho, Wo, cols.data());
        detail::gemm(w.data(), cols.data(), out.data() + n * O * P, O, R, P, false);
    }

    return detail::record<T>(Shape{N, O, Ho, Wo}, std::move(out), {x.node(), w.node()}, [&] {
        auto xn = x.node();
        auto wn = w.node();
        return [xn, wn, N, C, H, W, O, K, stride, pad, Ho, Wo,
                P, R](const std::vector<T>& g, const std::vector<std::vector<T>*>& gin) {
            std::vector<T> cols(R * P);
            std::vector<T> dcols(gin[0] ? R * P : 0);
            for (std::size_t n = 0; n < N; ++n) {
                const T* gn = g.data() + n * O * P;
                if (gin[1]) {
                    detail::im2col(xn->value.data() + n * C * H * W, C, H, W, K, stride, pad, Ho,
                                   Wo, cols.data());
                    detail::gemm_bt(gn, cols.data(), gin[1]->data(), O, P, R, true);
                }
                if (gin[0]) {
                    detail::gemm_at(wn->value.data(), gn, dcols.data(), R, O, P, false);
                    detail::col2im_add(dcols.data(), C, H, W, K, stride, pad, Ho, Wo,
                                       gin[0]->data() + n * C * H * W);
                }
            }
        };
    });
}

// Per-channel bias for NCHW tensors.
template <class T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& b) {
    if (x.shape().size() != 4 || b.shape().size() != 1 || b.dim(0) != x.dim(1))
        throw ConfigError("add_channel_bias: bias " + shape_str(b.shape()) +
                          " incompatible with " + shape_str(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    std::vector<T> out(x.numel());
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const T bc = b.data()[c];
            const T* src = x.data() + (n * C + c) * HW;
            T* dst = out.data() + (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) dst[i] = src[i] + bc;
        }
    return detail::record<T>(x.shape(), std::move(out), {x.node(), b.node()}, [&] {
        return [N, C, HW](const std::vector<T>& g, const std::vector<std::vector<T>*>& gin) {
            if (gin[0])
                for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
            if (gin[1])
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t c = 0; c < C; ++c) {
                        const T* gs = g.data() + (n * C + c) * HW;
                        T acc = 0;
                        for (std::size_t i = 0; i < HW; ++i) acc += gs[i];
                        (*gin[1])[c] += acc;
                    }
        };
    });
}

// Nearest-neighbour 2x upsampling of NCHW tensors.
template <class T>
Tensor<T> upsample2x(const Tensor<T>& x) {
    if (x.shape().size() != 4)
        throw ConfigError("upsample2x: expected NCHW, got " + shape_str(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    std::vector<T> out(N * C * 4 * H * W);
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const T* src = x.data() + nc * H * W;
        T* dst = out.data() + nc * 4 * H * W;
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x2 = 0; x2 < W; ++x2) {
                const T v = src[y * W + x2];
                T* d = dst + (2 * y) * (2 * W) + 2 * x2;
                d[0] = v;
                d[1] = v;
                d[2 * W] = v;
                d[2 * W + 1] = v;
            }
    }
    return detail::record<T>(Shape{N, C, 2 * H, 2 * W}, std::move(out), {x.node()}, [&] {
        return [N, C, H, W](const std::vector<T>& g, const std::vector<std::vector<T>*>& gin) {
            if (!gin[0]) return;
            for (std::size_t nc = 0; nc < N * C; ++nc) {
                const T* gs = g.data() + nc * 4 * H * W;
                T* gd = gin[0]->data() + nc * H * W;
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t x2 = 0; x2 < W; ++x2) {
                        const T* s = gs + (2 * y) * (2 * W) + 2 * x2;
                        gd[y * W + x2] += s[0] + s[1] + s[2 * W] + s[2 * W + 1];
                    }
            }
        };
    });
}

// out[N x O] = x[N x I] * w[I x O] + b[O]
template <class T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.shape().size() != 2 || w.shape().size() != 2 || x.dim(1) != w.dim(0) ||
        b.shape().size() != 1 || b.dim(0) != w.dim(1))
        throw ConfigError("fully_connected: incompatible shapes x" + shape_str(x.shape()) + " w" +
                          shape_str(w.shape()) + " b" + shape_str(b.shape()));
    const std::size_t N = x.dim(0), I = x.dim(1), O = w.dim(1);
    std::vector<T> out(N * O);
    detail::gemm(x.data(), w.data(), out.data(), N, I, O, false);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < O; ++o) out[n * O + o] += b.data()[o];
    return detail::record<T>(Shape{N, O}, std::move(out), {x.node(), w.node(), b.node()}, [&] {
        auto xn = x.node();
        auto wn = w.node();
        return [xn, wn, N, I, O](const std::vector<T>& g, const std::vector<std::vector<T>*>& gin) {
            if (gin[0]) detail::gemm_bt(g.data(), wn->value.data(), gin[0]->data(), N, O, I, true);
            if (gin[1]) detail::gemm_at(xn->value.data(), g.data(), gin[1]->data(), I, N, O, true);
            if (gin[2])
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t o = 0; o < O; ++o) (*gin[2])[o] += g[n * O + o];
        };
    });
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

// Running statistics live outside the graph so they can be checkpointed as
// plain buffers. `count` is a 1-element tensor holding the number of
// train-mode updates; eval mode before the first update is an error.
template <class T>
struct BnStats {
    Tensor<T> running_mean;
    Tensor<T> running_var;
    Tensor<T> count;  // shape {1}

    static BnStats make(std::size_t channels) {
        BnStats s;
        s.running_mean = Tensor<T>::zeros({channels});
        s.running_var = Tensor<T>::filled({channels}, T(1));
        s.count = Tensor<T>::zeros({1});
        return s;
    }
    bool initialized() const { return count.data()[0] > T(0); }

    // Tensor handles share storage on copy; clone when independent stats are
    // needed.
    BnStats clone() const {
        BnStats s;
        s.running_mean = running_mean.clone();
        s.running_var = running_var.clone();
        s.count = count.clone();
        return s;
    }
};

// Normalizes per channel over batch and spatial dims (biased variance), then
// applies the affine pair. Train mode updates running stats by EMA; the very
// first update copies the batch statistics outright.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BnStats<T>& stats, Mode mode, T momentum = T(0.1), T eps = T(1e-5)) {
    if (x.shape().size() != 4 && x.shape().size() != 2)
        throw ConfigError("batch_norm: expected NCHW or NC input, got " + shape_str(x.shape()));
    const std::size_t N = x.dim(0);
    const std::size_t C = x.dim(1);
    const std::size_t HW = x.shape().size() == 4 ? x.dim(2) * x.dim(3) : 1;
    if (N == 0) throw ConfigError("batch_norm: empty batch");
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
        throw ConfigError("batch_norm: affine params must have shape {" + std::to_string(C) + "}");
    const std::size_t M = N * HW;  // reduction size per channel

    std::vector<T> mean_c(C), inv_std_c(C);
    if (mode == Mode::train) {
        std::vector<T> var_c(C, T(0));
        for (std::size_t c = 0; c < C; ++c) {
            T acc = 0;
            for (std::size_t n = 0; n < N; ++n) {
                const T* src = x.data() + (n * C + c) * HW;
                for (std::size_t i = 0; i < HW; ++i) acc += src[i];
            }
            mean_c[c] = acc / static_cast<T>(M);
            T vacc = 0;
            for (std::size_t n = 0; n < N; ++n) {
                const T* src = x.data() + (n * C + c) * HW;
                for (std::size_t i = 0; i < HW; ++i) {
                    const T d = src[i] - mean_c[c];
                    vacc += d * d;
                }
            }
            var_c[c] = vacc / static_cast<T>(M);
            inv_std_c[c] = T(1) / std::sqrt(var_c[c] + eps);
        }
        if (!stats.initialized()) {
            for (std::size_t c = 0; c < C; ++c) {
                stats.running_mean.data()[c] = mean_c[c];
                stats.running_var.data()[c] = var_c[c];
            }
        } else {
            for (std::size_t c = 0; c < C; ++c) {
                stats.running_mean.data()[c] =
                    (T(1) - momentum) * stats.running_mean.data()[c] + momentum * mean_c[c];
                stats.running_var.data()[c] =
                    (T(1) - momentum) * stats.running_var.data()[c] + momentum * var_c[c];
            }
        }
        stats.count.data()[0] += T(1);
    } else {
        if (!stats.initialized())
            throw ConfigError("batch_norm: eval mode requested before any running stats exist");
        for (std::size_t c = 0; c < C; ++c) {
            mean_c[c] = stats.running_mean.data()[c];
            inv_std_c[c] = T(1) / std::sqrt(stats.running_var.data()[c] + eps);
        }
    }

    std::vector<T> xhat(x.numel());
    std::vector<T> out(x.numel());
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const T* src = x.data() + (n * C + c) * HW;
            T* xh = xhat.data() + (n * C + c) * HW;
            T* dst = out.data() + (n * C + c) * HW;
            const T mu = mean_c[c], is = inv_std_c[c];
            const T gc = gamma.data()[c], bc = beta.data()[c];
            for (std::size_t i = 0; i < HW; ++i) {
                xh[i] = (src[i] - mu) * is;
                dst[i] = gc * xh[i] + bc;
            }
        }

    const bool train_mode = mode == Mode::train;
    return detail::record<T>(x.shape(), std::move(out),
                             {x.node(), gamma.node(), beta.node()}, [&] {
        auto gn = gamma.node();
        return [xh = std::move(xhat), is = std::move(inv_std_c), gn, N, C, HW, M,
                train_mode](const std::vector<T>& g, const std::vector<std::vector<T>*>& gin) {
            for (std::size_t c = 0; c < C; ++c) {
                T sum_g = 0, sum_gx = 0;
                for (std::size_t n = 0; n < N; ++n) {
                    const std::size_t base = (n * C + c) * HW;
                    for (std::size_t i = 0; i < HW; ++i) {
                        sum_g += g[base + i];
                        sum_gx += g[base + i] * xh[base + i];
                    }
                }
                if (gin[1]) (*gin[1])[c] += sum_gx;
                if (gin[2]) (*gin[2])[c] += sum_g;
                if (gin[0]) {
                    const T gc = gn->value[c];
                    if (train_mode) {
                        const T mg = sum_g / static_cast<T>(M);
                        const T mgx = sum_gx / static_cast<T>(M);
                        for (std::size_t n = 0; n < N; ++n) {
                            const std::size_t base = (n * C + c) * HW;
                            for (std::size_t i = 0; i < HW; ++i)
                                (*gin[0])[base + i] +=
                                    gc * is[c] * (g[base + i] - mg - xh[base + i] * mgx);
                        }
                    } else {
                        for (std::size_t n = 0; n < N; ++n) {
                            const std::size_t base = (n * C + c) * HW;
                            for (std::size_t i = 0; i < HW; ++i)
                                (*gin[0])[base + i] += gc * is[c] * g[base + i];
                        }
                    }
                }
            }
        };
    });
}

// ---------------------------------------------------------------------------
// Loss kernels (custom ops with analytic backward)
// ---------------------------------------------------------------------------

// mean |a - b| over all elements.
template <class T>
Tensor<T> l1_mean(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "l1_mean");
    const std::size_t n = a.numel();
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(a.data()[i] - b.data()[i]);
    const T inv = T(1) / static_cast<T>(n);
    return detail::record<T>(Shape{1}, {acc * inv}, {a.node(), b.node()}, [&] {
        auto an = a.node();
        auto bn = b.node();
        return [an, bn, inv](const std::vector<T>& g, const std::vector<std::vector<T>*>& gin) {
            for (std::size_t i = 0; i < an->value.size(); ++i) {
                const T d = an->value[i] - bn->value[i];
                const T s = (d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0))) * inv * g[0];
                if (gin[0]) (*gin[0])[i] += s;
                if (gin[1]) (*gin[1])[i] -= s;
            }
        };
    });
}

// Anisotropic total variation of an NCHW batch: sum of absolute horizontal
// and vertical neighbour differences, normalized by the element count.
template <class T>
Tensor<T> tv_loss(const Tensor<T>& x) {
    if (x.shape().size() != 4)
        throw ConfigError("tv_loss: expected NCHW, got " + shape_str(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H < 2 || W < 2) throw ConfigError("tv_loss: spatial dims must be >= 2");
    const T inv = T(1) / static_cast<T>(x.numel());
    T acc = 0;
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const T* p = x.data() + nc * H * W;
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t i = 0; i < W - 1; ++i)
                acc += std::abs(p[y * W + i + 1] - p[y * W + i]);
        for (std::size_t y = 0; y + 1 < H; ++y)
            for (std::size_t i = 0; i < W; ++i)
                acc += std::abs(p[(y + 1) * W + i] - p[y * W + i]);
    }
    return detail::record<T>(Shape{1}, {acc * inv}, {x.node()}, [&] {
        auto xn = x.node();
        return [xn, N, C, H, W, inv](const std::vector<T>& g,
                                     const std::vector<std::vector<T>*>& gin) {
            if (!gin[0]) return;
            const T go = g[0] * inv;
            auto sgn = [](T d) { return d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)); };
            for (std::size_t nc = 0; nc < N * C; ++nc) {
                const T* p = xn->value.data() + nc * H * W;
                T* gd = gin[0]->data() + nc * H * W;
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t i = 0; i < W - 1; ++i) {
                        const T s = sgn(p[y * W + i + 1] - p[y * W + i]) * go;
                        gd[y * W + i + 1] += s;
                        gd[y * W + i] -= s;
                    }
                for (std::size_t y = 0; y + 1 < H; ++y)
                    for (std::size_t i = 0; i < W; ++i) {
                        const T s = sgn(p[(y + 1) * W + i] - p[y * W + i]) * go;
                        gd[(y + 1) * W + i] += s;
                        gd[y * W + i] -= s;
                    }
            }
        };
    });
}

// Voxel loss over a [N x V] batch: mean over rows of
//   alpha * ||rhat - r||_2 + (1 - alpha) * (1 - cos(rhat, r)).
// A zero-norm row makes the cosine term 1 with zero gradient; the cosine
// branch is skipped entirely at alpha == 1 (counted for instrumentation).
template <class T>
Tensor<T> fmri_pair_loss(const Tensor<T>& rhat, const Tensor<T>& r, T alpha) {
    detail::check_same_shape(rhat, r, "fmri_pair_loss");
    if (rhat.shape().size() != 2)
        throw ConfigError("fmri_pair_loss: expected [N x V], got " + shape_str(rhat.shape()));
    if (!(alpha >= T(0) && alpha <= T(1)))
        throw ConfigError("fmri_pair_loss: alpha must lie in [0,1]");
    const std::size_t N = rhat.dim(0), V = rhat.dim(1);
    if (V == 0) throw ConfigError("fmri_pair_loss: empty voxel vectors");
    constexpr T tiny = T(1e-12);

    T total = 0;
    for (std::size_t n = 0; n < N; ++n) {
        const T* a = rhat.data() + n * V;
        const T* b = r.data() + n * V;
        T sq = 0;
        for (std::size_t v = 0; v < V; ++v) {
            const T d = a[v] - b[v];
            sq += d * d;
        }
        total += alpha * std::sqrt(sq);
        if (alpha < T(1)) {
            counters::cosine_branch_evals().fetch_add(1, std::memory_order_relaxed);
            T dot = 0, na = 0, nb = 0;
            for (std::size_t v = 0; v < V; ++v) {
                dot += a[v] * b[v];
                na += a[v] * a[v];
                nb += b[v] * b[v];
            }
            const T cosv = (na > tiny && nb > tiny) ? dot / (std::sqrt(na) * std::sqrt(nb)) : T(0);
            total += (T(1) - alpha) * (T(1) - cosv);
        }
    }
    const T invN = T(1) / static_cast<T>(N);
    return detail::record<T>(Shape{1}, {total * invN}, {rhat.node(), r.node()}, [&] {
        auto an = rhat.node();
        auto bn = r.node();
        return [an, bn, alpha, N, V, invN](const std::vector<T>& g,
                                           const std::vector<std::vector<T>*>& gin) {
            constexpr T tiny = T(1e-12);
            const T go = g[0] * invN;
            for (std::size_t n = 0; n < N; ++n) {
                const T* a = an->value.data() + n * V;
                const T* b = bn->value.data() + n * V;
                T sq = 0, dot = 0, na2 = 0, nb2 = 0;
                for (std::size_t v = 0; v < V; ++v) {
                    const T d = a[v] - b[v];
                    sq += d * d;
                    dot += a[v] * b[v];
                    na2 += a[v] * a[v];
                    nb2 += b[v] * b[v];
                }
                const T norm_e = std::sqrt(sq);
                const T na = std::sqrt(na2), nb = std::sqrt(nb2);
                const bool cos_ok = alpha < T(1) && na2 > tiny && nb2 > tiny;
                const T cosv = cos_ok ? dot / (na * nb) : T(0);
                for (std::size_t v = 0; v < V; ++v) {
                    T ga = 0, gb = 0;
                    if (norm_e > tiny) {
                        const T e = (a[v] - b[v]) / norm_e;
                        ga += alpha * e;
                        gb -= alpha * e;
                    }
                    if (cos_ok) {
                        // d(1-cos)/da = -(b/(|a||b|) - cos * a/|a|^2)
                        ga -= (T(1) - alpha) * (b[v] / (na * nb) - cosv * a[v] / na2);
                        gb -= (T(1) - alpha) * (a[v] / (na * nb) - cosv * b[v] / nb2);
                    }
                    if (gin[0]) (*gin[0])[n * V + v] += go * ga;
                    if (gin[1]) (*gin[1])[n * V + v] += go * gb;
                }
            }
        };
    });
}

}  // namespace vxc
