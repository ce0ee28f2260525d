#pragma once

// Dense tensors with reverse-mode automatic differentiation. The op set is
// exactly what the toy decoder transformer needs; each op records a closure
// that scatters output gradients into its parents. Graphs are single-use:
// backward() releases the tape, and parameters keep accumulating gradients
// until zero_grad().
//
// Heavy matrix products are delegated to Eigen maps over the flat buffers;
// everything else is plain loops.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "likra/util.hpp"

namespace likra {

template <typename T>
class TensorT {
  public:
    struct Node {
        std::vector<int> shape;
        std::vector<T> data;
        std::vector<T> grad;  // allocated lazily, same size as data
        bool requires_grad = false;
        bool backward_done = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward_fn;  // empty for leaves

        int64_t numel() const { return static_cast<int64_t>(data.size()); }
        void ensure_grad() {
            if (grad.size() != data.size()) grad.assign(data.size(), T(0));
        }
    };

    TensorT() = default;

    static TensorT zeros(std::vector<int> shape) {
        return from_data(std::move(shape), {});
    }

    static TensorT full(std::vector<int> shape, T value) {
        TensorT t = zeros(std::move(shape));
        std::fill(t.data().begin(), t.data().end(), value);
        return t;
    }

    static TensorT scalar(T value) { return full({1}, value); }

    static TensorT from_data(std::vector<int> shape, std::vector<T> data) {
        int64_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw ContractError("tensor dimension must be positive, got shape " + shape_str(shape));
            n *= d;
        }
        auto node = std::make_shared<Node>();
        node->shape = std::move(shape);
        if (data.empty()) {
            node->data.assign(static_cast<size_t>(n), T(0));
        } else {
            if (static_cast<int64_t>(data.size()) != n) {
                throw ContractError("data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(node->shape));
            }
            node->data = std::move(data);
        }
        TensorT t;
        t.node_ = std::move(node);
        return t;
    }

    static TensorT randn(std::vector<int> shape, Rng& rng, T stddev = T(1)) {
        TensorT t = zeros(std::move(shape));
        std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
        for (auto& x : t.data()) x = static_cast<T>(dist(rng));
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return node_->numel(); }

    std::vector<T>& data() { return node_->data; }
    const std::vector<T>& data() const { return node_->data; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::vector<T>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<T>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    T item() const {
        if (numel() != 1) throw ContractError("item() requires a scalar tensor, got shape " + shape_str(shape()));
        return node_->data[0];
    }

    std::shared_ptr<Node> node() const { return node_; }

    // Reverse-mode sweep from a scalar. Seeds d(loss)/d(loss) = seed (use
    // 1/batch for mean-over-batch accumulation), propagates to every leaf
    // with requires_grad, then drops the tape. Leaf grads accumulate across
    // calls until zero_grad().
    void backward(T seed = T(1)) {
        if (!node_) throw ContractError("backward on undefined tensor");
        if (numel() != 1) {
            throw ContractError("backward requires a scalar loss, got shape " + shape_str(shape()));
        }
        if (node_->backward_done) {
            throw ContractError("backward called twice on the same graph; run a fresh forward pass first");
        }
        node_->backward_done = true;

        // Post-order DFS over parents gives a topological order.
        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        std::vector<std::pair<Node*, size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, idx] = stack.back();
            if (idx < n->parents.size()) {
                Node* p = n->parents[idx].get();
                ++idx;
                if (p->backward_fn && !seen.count(p)) {
                    seen.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }

        node_->ensure_grad();
        node_->grad[0] += seed;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backward_fn) n->backward_fn(*n);
        }
        // Release the tape; parameter (leaf) grads survive.
        for (Node* n : order) {
            n->backward_fn = nullptr;
            n->parents.clear();
            if (n != node_.get() && !n->requires_grad) n->grad.clear();
        }
    }

  private:
    std::shared_ptr<Node> node_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

namespace detail {

template <typename T>
using EMat = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ECMat = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
TensorT<T> make_op_result(std::vector<int> shape,
                          std::initializer_list<TensorT<T>> parents,
                          std::function<void(typename TensorT<T>::Node&)> backward_fn) {
    TensorT<T> out = TensorT<T>::zeros(std::move(shape));
    bool needs = false;
    for (const auto& p : parents) {
        if (p.node()->requires_grad || p.node()->backward_fn) needs = true;
    }
    if (needs) {
        auto n = out.node();
        for (const auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward_fn);
    }
    return out;
}

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                            " vs " + shape_str(b.shape()));
    }
}

// Rows/cols view of an arbitrary-rank tensor as [prod(leading), last].
template <typename T>
std::pair<int64_t, int> as_rows(const TensorT<T>& t, const char* op) {
    if (t.ndim() < 1 || t.dim(t.ndim() - 1) < 1) {
        throw ContractError(std::string(op) + ": last dimension must be >= 1, got shape " + shape_str(t.shape()));
    }
    int cols = t.dim(t.ndim() - 1);
    return {t.numel() / cols, cols};
}

}  // namespace detail

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "add");
    auto an = a.node();
    auto bn = b.node();
    auto out = detail::make_op_result<T>(
        a.shape(), {a, b}, [an, bn](typename TensorT<T>::Node& o) {
            if (an->requires_grad || an->backward_fn) {
                an->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
            }
            if (bn->requires_grad || bn->backward_fn) {
                bn->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i];
            }
        });
    for (size_t i = 0; i < out.data().size(); ++i) out.data()[i] = an->data[i] + bn->data[i];
    return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "sub");
    auto an = a.node();
    auto bn = b.node();
    auto out = detail::make_op_result<T>(
        a.shape(), {a, b}, [an, bn](typename TensorT<T>::Node& o) {
            if (an->requires_grad || an->backward_fn) {
                an->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
            }
            if (bn->requires_grad || bn->backward_fn) {
                bn->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] -= o.grad[i];
            }
        });
    for (size_t i = 0; i < out.data().size(); ++i) out.data()[i] = an->data[i] - bn->data[i];
    return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "mul");
    auto an = a.node();
    auto bn = b.node();
    auto out = detail::make_op_result<T>(
        a.shape(), {a, b}, [an, bn](typename TensorT<T>::Node& o) {
            if (an->requires_grad || an->backward_fn) {
                an->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * bn->data[i];
            }
            if (bn->requires_grad || bn->backward_fn) {
                bn->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i] * an->data[i];
            }
        });
    for (size_t i = 0; i < out.data().size(); ++i) out.data()[i] = an->data[i] * bn->data[i];
    return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T c) {
    auto an = a.node();
    auto out = detail::make_op_result<T>(
        a.shape(), {a}, [an, c](typename TensorT<T>::Node& o) {
            an->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += c * o.grad[i];
        });
    for (size_t i = 0; i < out.data().size(); ++i) out.data()[i] = c * an->data[i];
    return out;
}

// x[m,n] + v[n], broadcast over rows (bias add).
template <typename T>
TensorT<T> add_rowvec(const TensorT<T>& x, const TensorT<T>& v) {
    auto [rows, cols] = detail::as_rows(x, "add_rowvec");
    if (v.ndim() != 1 || v.dim(0) != cols) {
        throw ContractError("add_rowvec: vector shape " + shape_str(v.shape()) +
                            " does not match row width of " + shape_str(x.shape()));
    }
    auto xn = x.node();
    auto vn = v.node();
    int64_t r = rows;
    int c = cols;
    auto out = detail::make_op_result<T>(
        x.shape(), {x, v}, [xn, vn, r, c](typename TensorT<T>::Node& o) {
            if (xn->requires_grad || xn->backward_fn) {
                xn->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
            }
            if (vn->requires_grad || vn->backward_fn) {
                vn->ensure_grad();
                for (int64_t i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j) vn->grad[j] += o.grad[i * c + j];
            }
        });
    for (int64_t i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.data()[i * c + j] = xn->data[i * c + j] + vn->data[j];
    return out;
}

// a[m,k] x b[k,n] -> [m,n]
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw ContractError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                            shape_str(b.shape()));
    }
    int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto an = a.node();
    auto bn = b.node();
    auto out = detail::make_op_result<T>(
        {m, n}, {a, b}, [an, bn, m, k, n](typename TensorT<T>::Node& o) {
            detail::ECMat<T> A(an->data.data(), m, k), B(bn->data.data(), k, n), G(o.grad.data(), m, n);
            if (an->requires_grad || an->backward_fn) {
                an->ensure_grad();
                detail::EMat<T> GA(an->grad.data(), m, k);
                GA.noalias() += G * B.transpose();
            }
            if (bn->requires_grad || bn->backward_fn) {
                bn->ensure_grad();
                detail::EMat<T> GB(bn->grad.data(), k, n);
                GB.noalias() += A.transpose() * G;
            }
        });
    detail::ECMat<T> A(an->data.data(), m, k), B(bn->data.data(), k, n);
    detail::EMat<T> C(out.data().data(), m, n);
    C.noalias() = A * B;
    return out;
}

// a[m,k] x b[n,k]^T -> [m,n]; saves an explicit transpose for y = x W^T.
template <typename T>
TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1)) {
        throw ContractError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " x " +
                            shape_str(b.shape()) + "^T");
    }
    int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    auto an = a.node();
    auto bn = b.node();
    auto out = detail::make_op_result<T>(
        {m, n}, {a, b}, [an, bn, m, k, n](typename TensorT<T>::Node& o) {
            detail::ECMat<T> A(an->data.data(), m, k), B(bn->data.data(), n, k), G(o.grad.data(), m, n);
            if (an->requires_grad || an->backward_fn) {
                an->ensure_grad();
                detail::EMat<T> GA(an->grad.data(), m, k);
                GA.noalias() += G * B;
            }
            if (bn->requires_grad || bn->backward_fn) {
                bn->ensure_grad();
                detail::EMat<T> GB(bn->grad.data(), n, k);
                GB.noalias() += G.transpose() * A;
            }
        });
    detail::ECMat<T> A(an->data.data(), m, k), B(bn->data.data(), n, k);
    detail::EMat<T> C(out.data().data(), m, n);
    C.noalias() = A * B.transpose();
    return out;
}

template <typename T>
TensorT<T> slice_cols(const TensorT<T>& x, int start, int width) {
    if (x.ndim() != 2) throw ContractError("slice_cols expects a matrix, got " + shape_str(x.shape()));
    int m = x.dim(0), n = x.dim(1);
    if (start < 0 || width <= 0 || start + width > n) {
        throw ContractError("slice_cols: range [" + std::to_string(start) + "," +
                            std::to_string(start + width) + ") out of bounds for " + shape_str(x.shape()));
    }
    auto xn = x.node();
    auto out = detail::make_op_result<T>(
        {m, width}, {x}, [xn, start, width, m, n](typename TensorT<T>::Node& o) {
            xn->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < width; ++j) xn->grad[i * n + start + j] += o.grad[i * width + j];
        });
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < width; ++j) out.data()[i * width + j] = xn->data[i * n + start + j];
    return out;
}

template <typename T>
TensorT<T> concat_cols(const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    int m = parts[0].dim(0);
    int total = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.dim(0) != m) {
            throw ContractError("concat_cols: row mismatch, first part " + shape_str(parts[0].shape()) +
                                " vs " + shape_str(p.shape()));
        }
        total += p.dim(1);
    }
    TensorT<T> out = TensorT<T>::zeros({m, total});
    std::vector<std::shared_ptr<typename TensorT<T>::Node>> pnodes;
    bool needs = false;
    for (const auto& p : parts) {
        pnodes.push_back(p.node());
        if (p.node()->requires_grad || p.node()->backward_fn) needs = true;
    }
    int off = 0;
    for (const auto& p : parts) {
        int w = p.dim(1);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j) out.data()[i * total + off + j] = p.data()[i * w + j];
        off += w;
    }
    if (needs) {
        auto on = out.node();
        on->parents = pnodes;
        on->backward_fn = [pnodes, m, total](typename TensorT<T>::Node& o) {
            int off2 = 0;
            for (const auto& pn : pnodes) {
                int w = pn->shape[1];
                if (pn->requires_grad || pn->backward_fn) {
                    pn->ensure_grad();
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < w; ++j) pn->grad[i * w + j] += o.grad[i * total + off2 + j];
                }
                off2 += w;
            }
        };
    }
    return out;
}

// table[V,d] gathered by ids -> [len(ids), d]; backward scatter-adds rows.
template <typename T>
TensorT<T> embedding(const TensorT<T>& table, std::span<const int32_t> ids) {
    if (table.ndim() != 2) throw ContractError("embedding table must be 2-D, got " + shape_str(table.shape()));
    int v = table.dim(0), d = table.dim(1);
    int len = static_cast<int>(ids.size());
    if (len == 0) throw ContractError("embedding: empty id sequence");
    for (int32_t id : ids) {
        if (id < 0 || id >= v) {
            throw ContractError("embedding: id " + std::to_string(id) + " out of range [0," +
                                std::to_string(v) + ")");
        }
    }
    auto tn = table.node();
    std::vector<int32_t> idv(ids.begin(), ids.end());
    auto out = detail::make_op_result<T>(
        {len, d}, {table}, [tn, idv, d](typename TensorT<T>::Node& o) {
            tn->ensure_grad();
            for (size_t i = 0; i < idv.size(); ++i) {
                T* dst = tn->grad.data() + static_cast<size_t>(idv[i]) * d;
                const T* src = o.grad.data() + i * d;
                for (int j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    for (int i = 0; i < len; ++i) {
        const T* src = tn->data.data() + static_cast<size_t>(idv[i]) * d;
        std::copy(src, src + d, out.data().begin() + static_cast<size_t>(i) * d);
    }
    return out;
}

// Row-wise softmax with max-subtraction; last dim is the distribution axis.
template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& x) {
    auto [rows, cols] = detail::as_rows(x, "softmax_rows");
    auto xn = x.node();
    TensorT<T> out = detail::make_op_result<T>(x.shape(), {x}, nullptr);
    int64_t r = rows;
    int c = cols;
    for (int64_t i = 0; i < r; ++i) {
        const T* in = xn->data.data() + i * c;
        T* o = out.data().data() + i * c;
        T mx = in[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, in[j]);
        T sum = 0;
        for (int j = 0; j < c; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (int j = 0; j < c; ++j) o[j] /= sum;
    }
    if (out.node()->parents.size()) {
        auto on = out.node();
        std::vector<T> probs = out.data();  // y is needed in backward; graph is single-use
        on->backward_fn = [xn, probs, r, c](typename TensorT<T>::Node& o) {
            xn->ensure_grad();
            for (int64_t i = 0; i < r; ++i) {
                const T* y = probs.data() + i * c;
                const T* g = o.grad.data() + i * c;
                T dot = 0;
                for (int j = 0; j < c; ++j) dot += y[j] * g[j];
                T* gx = xn->grad.data() + i * c;
                for (int j = 0; j < c; ++j) gx[j] += y[j] * (g[j] - dot);
            }
        };
    }
    return out;
}

// softmax over columns 0..row for square score matrices (causal attention).
// Masked-out entries get exactly zero probability.
template <typename T>
TensorT<T> causal_softmax(const TensorT<T>& x) {
    if (x.ndim() != 2 || x.dim(0) != x.dim(1)) {
        throw ContractError("causal_softmax expects a square matrix, got " + shape_str(x.shape()));
    }
    int n = x.dim(0);
    auto xn = x.node();
    TensorT<T> out = detail::make_op_result<T>(x.shape(), {x}, nullptr);
    for (int i = 0; i < n; ++i) {
        const T* in = xn->data.data() + static_cast<size_t>(i) * n;
        T* o = out.data().data() + static_cast<size_t>(i) * n;
        T mx = in[0];
        for (int j = 1; j <= i; ++j) mx = std::max(mx, in[j]);
        T sum = 0;
        for (int j = 0; j <= i; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (int j = 0; j <= i; ++j) o[j] /= sum;
        for (int j = i + 1; j < n; ++j) o[j] = T(0);
    }
    if (out.node()->parents.size()) {
        auto on = out.node();
        std::vector<T> probs = out.data();
        on->backward_fn = [xn, probs, n](typename TensorT<T>::Node& o) {
            xn->ensure_grad();
            for (int i = 0; i < n; ++i) {
                const T* y = probs.data() + static_cast<size_t>(i) * n;
                const T* g = o.grad.data() + static_cast<size_t>(i) * n;
                T dot = 0;
                for (int j = 0; j <= i; ++j) dot += y[j] * g[j];
                T* gx = xn->grad.data() + static_cast<size_t>(i) * n;
                for (int j = 0; j <= i; ++j) gx[j] += y[j] * (g[j] - dot);
            }
        };
    }
    return out;
}

template <typename T>
TensorT<T> log_softmax_rows(const TensorT<T>& x) {
    auto [rows, cols] = detail::as_rows(x, "log_softmax_rows");
    auto xn = x.node();
    TensorT<T> out = detail::make_op_result<T>(x.shape(), {x}, nullptr);
    int64_t r = rows;
    int c = cols;
    for (int64_t i = 0; i < r; ++i) {
        const T* in = xn->data.data() + i * c;
        T* o = out.data().data() + i * c;
        T mx = in[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, in[j]);
        T sum = 0;
        for (int j = 0; j < c; ++j) sum += std::exp(in[j] - mx);
        T lse = mx + std::log(sum);
        for (int j = 0; j < c; ++j) o[j] = in[j] - lse;
    }
    if (out.node()->parents.size()) {
        auto on = out.node();
        std::vector<T> logp = out.data();
        on->backward_fn = [xn, logp, r, c](typename TensorT<T>::Node& o) {
            xn->ensure_grad();
            for (int64_t i = 0; i < r; ++i) {
                const T* lp = logp.data() + i * c;
                const T* g = o.grad.data() + i * c;
                T gsum = 0;
                for (int j = 0; j < c; ++j) gsum += g[j];
                T* gx = xn->grad.data() + i * c;
                for (int j = 0; j < c; ++j) gx[j] += g[j] - std::exp(lp[j]) * gsum;
            }
        };
    }
    return out;
}

// Exact GELU (erf form, not the tanh approximation) so finite differences
// agree to high precision.
template <typename T>
TensorT<T> gelu(const TensorT<T>& x) {
    auto xn = x.node();
    static const T kInvSqrt2 = T(0.7071067811865475244);
    static const T kInvSqrt2Pi = T(0.3989422804014326779);
    auto out = detail::make_op_result<T>(
        x.shape(), {x}, [xn](typename TensorT<T>::Node& o) {
            xn->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) {
                T v = xn->data[i];
                T cdf = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
                T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
                xn->grad[i] += o.grad[i] * (cdf + v * pdf);
            }
        });
    for (size_t i = 0; i < out.data().size(); ++i) {
        T v = xn->data[i];
        out.data()[i] = T(0.5) * v * (T(1) + std::erf(v * kInvSqrt2));
    }
    return out;
}

// Row-wise layer norm with learned gain/bias.
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain, const TensorT<T>& bias,
                      T eps = T(1e-5)) {
    auto [rows, cols] = detail::as_rows(x, "layer_norm");
    if (gain.ndim() != 1 || gain.dim(0) != cols || bias.ndim() != 1 || bias.dim(0) != cols) {
        throw ContractError("layer_norm: gain/bias must be [" + std::to_string(cols) + "], got " +
                            shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
    }
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    int64_t r = rows;
    int c = cols;
    // Cache normalized values and 1/std per row for the backward pass.
    auto xhat = std::make_shared<std::vector<T>>(xn->data.size());
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(r));
    auto out = detail::make_op_result<T>(
        x.shape(), {x, gain, bias},
        [xn, gn, bn, xhat, inv_std, r, c](typename TensorT<T>::Node& o) {
            bool need_g = gn->requires_grad || gn->backward_fn;
            bool need_b = bn->requires_grad || bn->backward_fn;
            bool need_x = xn->requires_grad || xn->backward_fn;
            if (need_g) gn->ensure_grad();
            if (need_b) bn->ensure_grad();
            if (need_x) xn->ensure_grad();
            for (int64_t i = 0; i < r; ++i) {
                const T* xh = xhat->data() + i * c;
                const T* g = o.grad.data() + i * c;
                if (need_g || need_b) {
                    for (int j = 0; j < c; ++j) {
                        if (need_g) gn->grad[j] += g[j] * xh[j];
                        if (need_b) bn->grad[j] += g[j];
                    }
                }
                if (need_x) {
                    // dL/dxhat = g * gain; standard layernorm backward
                    T sum_gh = 0, sum_ghx = 0;
                    for (int j = 0; j < c; ++j) {
                        T gh = g[j] * gn->data[j];
                        sum_gh += gh;
                        sum_ghx += gh * xh[j];
                    }
                    T* gx = xn->grad.data() + i * c;
                    T is = (*inv_std)[static_cast<size_t>(i)];
                    for (int j = 0; j < c; ++j) {
                        T gh = g[j] * gn->data[j];
                        gx[j] += is * (gh - (sum_gh + xh[j] * sum_ghx) / T(c));
                    }
                }
            }
        });
    for (int64_t i = 0; i < r; ++i) {
        const T* in = xn->data.data() + i * c;
        T mean = 0;
        for (int j = 0; j < c; ++j) mean += in[j];
        mean /= T(c);
        T var = 0;
        for (int j = 0; j < c; ++j) var += (in[j] - mean) * (in[j] - mean);
        var /= T(c);
        T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(i)] = is;
        T* xh = xhat->data() + i * c;
        T* o = out.data().data() + i * c;
        for (int j = 0; j < c; ++j) {
            xh[j] = (in[j] - mean) * is;
            o[j] = xh[j] * gn->data[j] + bn->data[j];
        }
    }
    return out;
}

// Negative log-likelihood over masked positions of a [t,v] log-prob matrix.
// mean=true divides by the mask count (training); mean=false is the plain
// sum of Eq-style log-likelihood terms.
template <typename T>
TensorT<T> nll_masked(const TensorT<T>& logprobs, std::span<const int32_t> targets,
                      std::span<const uint8_t> mask, bool mean = true) {
    if (logprobs.ndim() != 2) {
        throw ContractError("nll_masked expects [t,v] log-probs, got " + shape_str(logprobs.shape()));
    }
    int t = logprobs.dim(0), v = logprobs.dim(1);
    if (static_cast<int>(targets.size()) != t || static_cast<int>(mask.size()) != t) {
        throw ContractError("nll_masked: targets/mask length must be " + std::to_string(t));
    }
    int64_t count = 0;
    for (int i = 0; i < t; ++i) {
        if (!mask[i]) continue;
        ++count;
        if (targets[i] < 0 || targets[i] >= v) {
            throw ContractError("nll_masked: target id " + std::to_string(targets[i]) +
                                " out of range [0," + std::to_string(v) + ")");
        }
    }
    if (count == 0) throw ContractError("nll_masked: empty mask");
    T denom = mean ? T(count) : T(1);
    auto ln = logprobs.node();
    std::vector<int32_t> tg(targets.begin(), targets.end());
    std::vector<uint8_t> mk(mask.begin(), mask.end());
    auto out = detail::make_op_result<T>(
        {1}, {logprobs}, [ln, tg, mk, v, denom](typename TensorT<T>::Node& o) {
            ln->ensure_grad();
            T g = o.grad[0] / denom;
            for (size_t i = 0; i < tg.size(); ++i) {
                if (mk[i]) ln->grad[i * v + tg[i]] -= g;
            }
        });
    T acc = 0;
    for (int i = 0; i < t; ++i) {
        if (mask[i]) acc -= ln->data[static_cast<size_t>(i) * v + tg[i]];
    }
    out.data()[0] = acc / denom;
    return out;
}

template <typename T>
TensorT<T> sum_all(const TensorT<T>& x) {
    auto xn = x.node();
    auto out = detail::make_op_result<T>(
        {1}, {x}, [xn](typename TensorT<T>::Node& o) {
            xn->ensure_grad();
            for (auto& g : xn->grad) g += o.grad[0];
        });
    T acc = 0;
    for (T v : xn->data) acc += v;
    out.data()[0] = acc;
    return out;
}

}  // namespace likra
