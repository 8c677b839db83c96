#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "vxc/errors.hpp"

namespace vxc {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

namespace detail {

// Thread-local switch mirroring the usual no-grad idiom: when disabled, ops
// record nothing and outputs are plain leaves.
inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // persistent accumulator, leaves only, lazily allocated
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads the transient gradient of this node and adds contributions into
    // the transient buffers of its parents (nullptr when a parent needs none).
    std::function<void(const std::vector<T>& gout, const std::vector<std::vector<T>*>& gin)>
        backward;

    bool is_leaf() const { return parents.empty(); }
};

// Value-semantic handle over a shared graph node, single dtype per tensor.
// float is the training type; double exists for gradient-check tests.
template <class T>
class Tensor {
public:
    Tensor() : node_(std::make_shared<Node<T>>()) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static Tensor filled(Shape shape, T v, bool requires_grad = false) {
        Tensor t;
        t.node_->shape = std::move(shape);
        t.node_->value.assign(shape_numel(t.node_->shape), v);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor from_vector(std::vector<T> data, Shape shape, bool requires_grad = false) {
        if (data.size() != shape_numel(shape))
            throw ConfigError("tensor data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
        Tensor t;
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(data);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return from_vector({v}, Shape{1}, requires_grad);
    }

    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->value.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

    const std::vector<T>& values() const { return node_->value; }
    std::vector<T>& values() { return node_->value; }
    const T* data() const { return node_->value.data(); }
    T* data() { return node_->value.data(); }

    T item() const {
        if (numel() != 1) throw ConfigError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) {
        if (b && !node_->is_leaf())
            throw ConfigError("requires_grad can only be toggled on leaf tensors");
        node_->requires_grad = b;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<T>& grad() const {
        if (node_->grad.empty()) throw ConfigError("tensor has no gradient populated");
        return node_->grad;
    }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }
    void clear_grad() { node_->grad.clear(); }

    // Deep copy of the value; the clone is a fresh leaf.
    Tensor clone() const {
        Tensor t;
        t.node_->shape = node_->shape;
        t.node_->value = node_->value;
        t.node_->requires_grad = node_->requires_grad;
        return t;
    }

    bool all_finite() const {
        for (const T& v : node_->value)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    std::shared_ptr<Node<T>>& node() { return node_; }
    const std::shared_ptr<Node<T>>& node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

namespace detail {

// Records an op node when grad mode is on and any input participates in the
// graph. `make_backward` is only invoked when recording happens.
template <class T, class MakeBackward>
Tensor<T> record(Shape out_shape, std::vector<T> out_value,
                 std::vector<std::shared_ptr<Node<T>>> parents, MakeBackward&& make_backward) {
    Tensor<T> out = Tensor<T>::from_vector(std::move(out_value), std::move(out_shape));
    bool any = false;
    if (grad_enabled())
        for (const auto& p : parents)
            if (p->requires_grad) any = true;
    if (any) {
        out.node()->requires_grad = true;
        out.node()->parents = std::move(parents);
        out.node()->backward = make_backward();
    }
    return out;
}

template <class T>
using RowMajorMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C[M x N] (+)= A[M x K] * B[K x N], row-major buffers. Eigen supplies the
// blocked kernel; single-threaded and deterministic for fixed sizes.
template <class T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate) {
    using Map = Eigen::Map<RowMajorMat<T>>;
    using CMap = Eigen::Map<const RowMajorMat<T>>;
    CMap A(a, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
    CMap B(b, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    Map C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    if (accumulate)
        C.noalias() += A * B;
    else
        C.noalias() = A * B;
}

// C[M x N] (+)= A^T[M x K] * B[K x N] where A is stored [K x M].
template <class T>
void gemm_at(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
    using Map = Eigen::Map<RowMajorMat<T>>;
    using CMap = Eigen::Map<const RowMajorMat<T>>;
    CMap A(a, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
    CMap B(b, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    Map C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    if (accumulate)
        C.noalias() += A.transpose() * B;
    else
        C.noalias() = A.transpose() * B;
}

// C[M x N] (+)= A[M x K] * B^T[K x N] where B is stored [N x K].
template <class T>
void gemm_bt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
    using Map = Eigen::Map<RowMajorMat<T>>;
    using CMap = Eigen::Map<const RowMajorMat<T>>;
    CMap A(a, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
    CMap B(b, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    Map C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    if (accumulate)
        C.noalias() += A * B.transpose();
    else
        C.noalias() = A * B.transpose();
}

}  // namespace detail

// Reverse-mode pass from a scalar loss. Transient per-call buffers carry the
// flowing gradient; persistent .grad is only accumulated on requires_grad
// leaves, so calling backward twice on the same graph doubles leaf grads.
template <class T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1)
        throw ConfigError("backward expects a scalar loss, got shape " + shape_str(loss.shape()));
    using NodeT = Node<T>;

    // Iterative post-order topological sort over the requires_grad subgraph.
    std::vector<NodeT*> topo;
    std::unordered_map<NodeT*, std::size_t> index;
    {
        std::vector<std::pair<NodeT*, std::size_t>> stack;
        std::unordered_map<NodeT*, int> state;  // 0 unseen, 1 open, 2 done
        stack.emplace_back(loss.node().get(), 0);
        state[loss.node().get()] = 1;
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                NodeT* p = node->parents[next++].get();
                if (p->requires_grad && state[p] == 0) {
                    state[p] = 1;
                    stack.emplace_back(p, 0);
                }
            } else {
                state[node] = 2;
                index[node] = topo.size();
                topo.push_back(node);
                stack.pop_back();
            }
        }
    }

    std::vector<std::vector<T>> gtmp(topo.size());
    for (std::size_t i = 0; i < topo.size(); ++i) gtmp[i].assign(topo[i]->value.size(), T(0));
    gtmp[index[loss.node().get()]][0] = T(1);

    for (std::size_t i = topo.size(); i-- > 0;) {
        NodeT* node = topo[i];
        if (!node->backward) continue;
        std::vector<std::vector<T>*> gin(node->parents.size(), nullptr);
        for (std::size_t p = 0; p < node->parents.size(); ++p) {
            NodeT* parent = node->parents[p].get();
            if (parent->requires_grad) gin[p] = &gtmp[index[parent]];
        }
        node->backward(gtmp[i], gin);
    }

    for (std::size_t i = 0; i < topo.size(); ++i) {
        NodeT* node = topo[i];
        if (!node->is_leaf() || !node->requires_grad) continue;
        if (node->grad.empty()) node->grad.assign(node->value.size(), T(0));
        const std::vector<T>& g = gtmp[i];
        for (std::size_t j = 0; j < g.size(); ++j) node->grad[j] += g[j];
    }
}

// ---------------------------------------------------------------------------
// Elementwise and reduction primitives
// ---------------------------------------------------------------------------

namespace detail {
template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
}
}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return detail::record<T>(a.shape(), std::move(out), {a.node(), b.node()}, [] {
        return [](const std::vector<T>& g, const std::vector<std::vector<T>*>& gin) {
            for (int p = 0; p < 2; ++p)
                if (gin[p])
                    for (std::size_t i = 0; i < g.size(); ++i) (*gin[p])[i] += g[i];
        };
    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return detail::record<T>(a.shape(), std::move(out), {a.node(), b.node()}, [] {
        return [](const std::vector<T>& g, const std::vector<std::vector<T>*>& gin) {
            if (gin[0])
                for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
            if (gin[1])
                for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
        };
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return detail::record<T>(a.shape(), std::move(out), {a.node(), b.node()}, [&] {
        auto an = a.node();
        auto bn = b.node();
        return [an, bn](const std::vector<T>& g, const std::vector<std::vector<T>*>& gin) {
            if (gin[0])
                for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * bn->value[i];
            if (gin[1])
                for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * an->value[i];
        };
    });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    return detail::record<T>(a.shape(), std::move(out), {a.node()}, [c] {
        return [c](const std::vector<T>& g, const std::vector<std::vector<T>*>& gin) {
            if (gin[0])
                for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * c;
        };
    });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + c;
    return detail::record<T>(a.shape(), std::move(out), {a.node()}, [] {
        return [](const std::vector<T>& g, const std::vector<std::vector<T>*>& gin) {
            if (gin[0])
                for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
        };
    });
}

template <class T>
Tensor<T> abs_op(const Tensor<T>& a) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(a.data()[i]);
    return detail::record<T>(a.shape(), std::move(out), {a.node()}, [&] {
        auto an = a.node();
        return [an](const std::vector<T>& g, const std::vector<std::vector<T>*>& gin) {
            if (!gin[0]) return;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T x = an->value[i];
                (*gin[0])[i] += g[i] * (x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)));
            }
        };
    });
}

// Elementwise square root with a guarded derivative: at exactly zero the
// subgradient is taken as 0 so that identity cases stay finite.
template <class T>
Tensor<T> sqrt_op(const Tensor<T>& a) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T x = a.data()[i];
        if (x < T(0)) throw ConfigError("sqrt_op: negative input");
        out[i] = std::sqrt(x);
    }
    return detail::record<T>(a.shape(), std::move(out), {a.node()}, [&] {
        auto an = a.node();
        return [an](const std::vector<T>& g, const std::vector<std::vector<T>*>& gin) {
            if (!gin[0]) return;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T r = std::sqrt(an->value[i]);
                if (r > T(0)) (*gin[0])[i] += g[i] / (T(2) * r);
            }
        };
    });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a.data()[i];
    return detail::record<T>(Shape{1}, {acc}, {a.node()}, [] {
        return [](const std::vector<T>& g, const std::vector<std::vector<T>*>& gin) {
            if (gin[0])
                for (auto& v : *gin[0]) v += g[0];
        };
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
    if (a.numel() == 0) throw ConfigError("mean of empty tensor");
    T acc = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a.data()[i];
    const T inv = T(1) / static_cast<T>(a.numel());
    return detail::record<T>(Shape{1}, {acc * inv}, {a.node()}, [inv] {
        return [inv](const std::vector<T>& g, const std::vector<std::vector<T>*>& gin) {
            if (gin[0])
                for (auto& v : *gin[0]) v += g[0] * inv;
        };
    });
}

// Copying reshape; gradients pass straight through.
template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
    if (shape_numel(new_shape) != a.numel())
        throw ConfigError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                          shape_str(new_shape));
    std::vector<T> out(a.values());
    return detail::record<T>(std::move(new_shape), std::move(out), {a.node()}, [] {
        return [](const std::vector<T>& g, const std::vector<std::vector<T>*>& gin) {
            if (gin[0])
                for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
        };
    });
}

// out[M x N] = a[M x K] * b[K x N]
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
        throw ConfigError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n);
    detail::gemm(a.data(), b.data(), out.data(), m, k, n, false);
    return detail::record<T>(Shape{m, n}, std::move(out), {a.node(), b.node()}, [&] {
        auto an = a.node();
        auto bn = b.node();
        return [an, bn, m, k, n](const std::vector<T>& g,
                                 const std::vector<std::vector<T>*>& gin) {
            if (gin[0]) detail::gemm_bt(g.data(), bn->value.data(), gin[0]->data(), m, n, k, true);
            if (gin[1]) detail::gemm_at(an->value.data(), g.data(), gin[1]->data(), k, m, n, true);
        };
    });
}

}  // namespace vxc
