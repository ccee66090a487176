// Copyright (c) 2026, the sytta authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense f64 tensors with reverse-mode autodiff on a dynamically built tape.
// The tape records operations in creation order, which is already a valid
// topological order, so backward() is a single reverse sweep. One tape is
// active per thread at a time; evaluation without an active tape skips all
// graph bookkeeping.
#pragma once

#include "sytta/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

namespace sytta {

class Tape;

namespace detail {

struct TensorNode {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad; // sized lazily during backward
    bool requires_grad = false;
    std::function<void()> backprop; // set only when recorded on a tape

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

inline Tape*& active_tape() {
    thread_local Tape* t = nullptr;
    return t;
}

inline int64_t shape_product(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("tensor dims must be positive");
        n *= d;
    }
    return n;
}

} // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape) {
        return Tensor(std::move(shape), {});
    }
    static Tensor full(std::vector<int> shape, double v) {
        Tensor t(std::move(shape), {});
        std::fill(t.data().begin(), t.data().end(), v);
        return t;
    }
    static Tensor from_data(std::vector<int> shape, std::vector<double> data) {
        Tensor t;
        t.n_ = std::make_shared<detail::TensorNode>();
        t.n_->shape = std::move(shape);
        if (detail::shape_product(t.n_->shape) != static_cast<int64_t>(data.size()))
            throw DimensionError("from_data: shape/element count mismatch");
        t.n_->data = std::move(data);
        return t;
    }
    static Tensor scalar(double v) { return from_data({1}, {v}); }
    static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0, double mean = 0.0) {
        Tensor t(std::move(shape), {});
        std::normal_distribution<double> dist(mean, stddev);
        for (double& x : t.data()) x = dist(rng);
        return t;
    }

    bool defined() const { return static_cast<bool>(n_); }
    const std::vector<int>& shape() const { return n_->shape; }
    int64_t size() const { return n_->size(); }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    int rows() const { return rank() == 2 ? n_->shape[0] : 1; }
    int cols() const { return n_->shape.back(); }

    std::vector<double>& data() { return n_->data; }
    const std::vector<double>& data() const { return n_->data; }
    double at(int i, int j) const { return n_->data[static_cast<size_t>(i) * cols() + j]; }
    double& at(int i, int j) { return n_->data[static_cast<size_t>(i) * cols() + j]; }
    double item() const {
        if (size() != 1) throw DimensionError("item() on non-scalar tensor");
        return n_->data[0];
    }

    bool requires_grad() const { return n_ && n_->requires_grad; }
    Tensor& mark_trainable() {
        n_->requires_grad = true;
        return *this;
    }
    bool has_grad() const { return n_ && n_->grad.size() == n_->data.size(); }
    std::vector<double>& grad() {
        n_->ensure_grad();
        return n_->grad;
    }
    void zero_grad() {
        if (n_) n_->grad.assign(n_->data.size(), 0.0);
    }

    // Value copy detached from any graph and from this handle's storage.
    Tensor detached_copy() const { return from_data(n_->shape, n_->data); }

    bool all_finite() const {
        for (double v : n_->data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::shared_ptr<detail::TensorNode> node() const { return n_; }

private:
    Tensor(std::vector<int> shape, std::vector<double>) {
        n_ = std::make_shared<detail::TensorNode>();
        n_->shape = std::move(shape);
        n_->data.assign(static_cast<size_t>(detail::shape_product(n_->shape)), 0.0);
    }

    std::shared_ptr<detail::TensorNode> n_;
};

// Records operation outputs in creation order. Parents are always created
// before children, so the vector is topologically sorted by construction.
class Tape {
public:
    void backward(const Tensor& root) {
        if (consumed_) throw InvariantError("tape already replayed");
        if (root.size() != 1) throw DimensionError("backward root must be scalar");
        consumed_ = true;
        auto rn = root.node();
        rn->ensure_grad();
        rn->grad[0] = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            detail::TensorNode& n = **it;
            if (!n.backprop) continue;
            if (n.grad.size() != n.data.size()) continue; // not reached from root
            n.backprop();
        }
    }

    size_t node_count() const { return nodes_.size(); }
    const std::vector<std::shared_ptr<detail::TensorNode>>& nodes() const { return nodes_; }

    void record(std::shared_ptr<detail::TensorNode> n) { nodes_.push_back(std::move(n)); }

private:
    std::vector<std::shared_ptr<detail::TensorNode>> nodes_;
    bool consumed_ = false;
};

class TapeScope {
public:
    explicit TapeScope(Tape& t) : prev_(detail::active_tape()) { detail::active_tape() = &t; }
    ~TapeScope() { detail::active_tape() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

// Suppresses recording within a scope (pure evaluation).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::active_tape()) { detail::active_tape() = nullptr; }
    ~NoGradGuard() { detail::active_tape() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    Tape* prev_;
};

namespace detail {

inline bool grad_wanted(std::initializer_list<const Tensor*> inputs) {
    if (!active_tape()) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

// Registers `fn` as the backward step of `out` and tracks it on the tape.
inline void record_op(Tensor& out, std::function<void()> fn) {
    auto n = out.node();
    n->requires_grad = true;
    n->backprop = std::move(fn);
    active_tape()->record(n);
}

inline void accumulate(TensorNode& dst, const std::vector<double>& g) {
    dst.ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}

} // namespace detail

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) throw DimensionError("matmul: rank-2 tensors required");
    const int m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) throw DimensionError("matmul: inner dimensions disagree");
    Tensor out = Tensor::zeros({m, n});
    {
        const double* pa = a.data().data();
        const double* pb = b.data().data();
        double* pc = out.data().data();
        for (int i = 0; i < m; ++i) {
            const double* ai = pa + static_cast<size_t>(i) * k;
            double* ci = pc + static_cast<size_t>(i) * n;
            for (int kk = 0; kk < k; ++kk) {
                const double av = ai[kk];
                if (av == 0.0) continue;
                const double* bk = pb + static_cast<size_t>(kk) * n;
                for (int j = 0; j < n; ++j) ci[j] += av * bk[j];
            }
        }
    }
    if (detail::grad_wanted({&a, &b})) {
        auto an = a.node(), bn = b.node();
        auto on = out.node().get();
        detail::record_op(out, [an, bn, on, m, k, n] {
            const double* g = on->grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                // dA += G * B^T
                for (int i = 0; i < m; ++i) {
                    const double* gi = g + static_cast<size_t>(i) * n;
                    double* dai = an->grad.data() + static_cast<size_t>(i) * k;
                    for (int kk = 0; kk < k; ++kk) {
                        const double* bk = bn->data.data() + static_cast<size_t>(kk) * n;
                        double s = 0.0;
                        for (int j = 0; j < n; ++j) s += gi[j] * bk[j];
                        dai[kk] += s;
                    }
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                // dB += A^T * G
                for (int kk = 0; kk < k; ++kk) {
                    double* dbk = bn->grad.data() + static_cast<size_t>(kk) * n;
                    for (int i = 0; i < m; ++i) {
                        const double av = an->data[static_cast<size_t>(i) * k + kk];
                        if (av == 0.0) continue;
                        const double* gi = g + static_cast<size_t>(i) * n;
                        for (int j = 0; j < n; ++j) dbk[j] += av * gi[j];
                    }
                }
            }
        });
    }
    return out;
}

inline Tensor transpose(const Tensor& x) {
    if (x.rank() != 2) throw DimensionError("transpose: rank-2 tensor required");
    const int m = x.shape()[0], n = x.shape()[1];
    Tensor out = Tensor::zeros({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = x.at(i, j);
    if (detail::grad_wanted({&x})) {
        auto xn = x.node();
        auto on = out.node().get();
        detail::record_op(out, [xn, on, m, n] {
            xn->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    xn->grad[static_cast<size_t>(i) * n + j] += on->grad[static_cast<size_t>(j) * m + i];
        });
    }
    return out;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) throw DimensionError(std::string(op) + ": shape mismatch");
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (detail::grad_wanted({&a, &b})) {
        auto an = a.node(), bn = b.node();
        auto on = out.node().get();
        detail::record_op(out, [an, bn, on] {
            if (an->requires_grad) detail::accumulate(*an, on->grad);
            if (bn->requires_grad) detail::accumulate(*bn, on->grad);
        });
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    if (detail::grad_wanted({&a, &b})) {
        auto an = a.node(), bn = b.node();
        auto on = out.node().get();
        detail::record_op(out, [an, bn, on] {
            if (an->requires_grad) detail::accumulate(*an, on->grad);
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] -= on->grad[i];
            }
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (detail::grad_wanted({&a, &b})) {
        auto an = a.node(), bn = b.node();
        auto on = out.node().get();
        detail::record_op(out, [an, bn, on] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * bn->data[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i] * an->data[i];
            }
        });
    }
    return out;
}

inline Tensor scale(const Tensor& x, double c) {
    Tensor out = Tensor::zeros(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * c;
    if (detail::grad_wanted({&x})) {
        auto xn = x.node();
        auto on = out.node().get();
        detail::record_op(out, [xn, on, c] {
            xn->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += c * on->grad[i];
        });
    }
    return out;
}

inline Tensor slice_rows(const Tensor& x, int r0, int nrows) {
    if (x.rank() != 2) throw DimensionError("slice_rows: rank-2 tensor required");
    const int m = x.shape()[0], n = x.shape()[1];
    if (r0 < 0 || nrows < 1 || r0 + nrows > m) throw DimensionError("slice_rows: range out of bounds");
    Tensor out = Tensor::zeros({nrows, n});
    std::copy_n(x.data().begin() + static_cast<size_t>(r0) * n, static_cast<size_t>(nrows) * n,
                out.data().begin());
    if (detail::grad_wanted({&x})) {
        auto xn = x.node();
        auto on = out.node().get();
        detail::record_op(out, [xn, on, r0, n, nrows] {
            xn->ensure_grad();
            for (size_t i = 0; i < static_cast<size_t>(nrows) * n; ++i)
                xn->grad[static_cast<size_t>(r0) * n + i] += on->grad[i];
        });
    }
    return out;
}

inline Tensor slice_cols(const Tensor& x, int c0, int ncols) {
    if (x.rank() != 2) throw DimensionError("slice_cols: rank-2 tensor required");
    const int m = x.shape()[0], n = x.shape()[1];
    if (c0 < 0 || ncols < 1 || c0 + ncols > n) throw DimensionError("slice_cols: range out of bounds");
    Tensor out = Tensor::zeros({m, ncols});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < ncols; ++j) out.at(i, j) = x.at(i, c0 + j);
    if (detail::grad_wanted({&x})) {
        auto xn = x.node();
        auto on = out.node().get();
        detail::record_op(out, [xn, on, m, n, c0, ncols] {
            xn->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < ncols; ++j)
                    xn->grad[static_cast<size_t>(i) * n + c0 + j] +=
                        on->grad[static_cast<size_t>(i) * ncols + j];
        });
    }
    return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: empty input");
    const int m = parts[0].shape()[0];
    int total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != 2 || p.shape()[0] != m) throw DimensionError("concat_cols: row mismatch");
        total += p.shape()[1];
    }
    Tensor out = Tensor::zeros({m, total});
    int off = 0;
    for (const Tensor& p : parts) {
        const int w = p.shape()[1];
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j) out.at(i, off + j) = p.at(i, j);
        off += w;
    }
    bool want = false;
    for (const Tensor& p : parts) want = want || p.requires_grad();
    if (detail::active_tape() && want) {
        std::vector<std::shared_ptr<detail::TensorNode>> pn;
        std::vector<int> widths;
        for (const Tensor& p : parts) {
            pn.push_back(p.node());
            widths.push_back(p.shape()[1]);
        }
        auto on = out.node().get();
        detail::record_op(out, [pn, widths, on, m, total] {
            int off2 = 0;
            for (size_t pi = 0; pi < pn.size(); ++pi) {
                const int w = widths[pi];
                if (pn[pi]->requires_grad) {
                    pn[pi]->ensure_grad();
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < w; ++j)
                            pn[pi]->grad[static_cast<size_t>(i) * w + j] +=
                                on->grad[static_cast<size_t>(i) * total + off2 + j];
                }
                off2 += w;
            }
        });
    }
    return out;
}

inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw DimensionError("embedding_lookup: rank-2 table required");
    const int v = table.shape()[0], d = table.shape()[1];
    const int n = static_cast<int>(ids.size());
    for (int id : ids)
        if (id < 0 || id >= v) throw DimensionError("embedding_lookup: id out of range");
    Tensor out = Tensor::zeros({n, d});
    for (int i = 0; i < n; ++i)
        std::copy_n(table.data().begin() + static_cast<size_t>(ids[static_cast<size_t>(i)]) * d, d,
                    out.data().begin() + static_cast<size_t>(i) * d);
    if (detail::grad_wanted({&table})) {
        auto tn = table.node();
        auto on = out.node().get();
        detail::record_op(out, [tn, on, ids, d, n] {
            tn->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j)
                    tn->grad[static_cast<size_t>(ids[static_cast<size_t>(i)]) * d + j] +=
                        on->grad[static_cast<size_t>(i) * d + j];
        });
    }
    return out;
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
    if (x.rank() != 2) throw DimensionError("layer_norm: rank-2 tensor required");
    const int m = x.shape()[0], n = x.shape()[1];
    if (gain.size() != n || bias.size() != n) throw DimensionError("layer_norm: gain/bias dim mismatch");
    Tensor out = Tensor::zeros({m, n});
    std::vector<double> inv_std(static_cast<size_t>(m));
    std::vector<double> xhat(static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += x.at(i, j);
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            const double c = x.at(i, j) - mu;
            var += c * c;
        }
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(i)] = is;
        for (int j = 0; j < n; ++j) {
            const double h = (x.at(i, j) - mu) * is;
            xhat[static_cast<size_t>(i) * n + j] = h;
            out.at(i, j) = h * gain.data()[static_cast<size_t>(j)] + bias.data()[static_cast<size_t>(j)];
        }
    }
    if (detail::grad_wanted({&x, &gain, &bias})) {
        auto xn = x.node(), gn = gain.node(), bn = bias.node();
        auto on = out.node().get();
        detail::record_op(out, [xn, gn, bn, on, m, n, inv_std, xhat] {
            for (int i = 0; i < m; ++i) {
                const double* g = on->grad.data() + static_cast<size_t>(i) * n;
                const double* h = xhat.data() + static_cast<size_t>(i) * n;
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    for (int j = 0; j < n; ++j) gn->grad[static_cast<size_t>(j)] += g[j] * h[j];
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (int j = 0; j < n; ++j) bn->grad[static_cast<size_t>(j)] += g[j];
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    double mean_gy = 0.0, mean_gyh = 0.0;
                    std::vector<double> gy(static_cast<size_t>(n));
                    for (int j = 0; j < n; ++j) {
                        gy[static_cast<size_t>(j)] = g[j] * gn->data[static_cast<size_t>(j)];
                        mean_gy += gy[static_cast<size_t>(j)];
                        mean_gyh += gy[static_cast<size_t>(j)] * h[j];
                    }
                    mean_gy /= n;
                    mean_gyh /= n;
                    const double is = inv_std[static_cast<size_t>(i)];
                    for (int j = 0; j < n; ++j)
                        xn->grad[static_cast<size_t>(i) * n + j] +=
                            (gy[static_cast<size_t>(j)] - mean_gy - h[j] * mean_gyh) * is;
                }
            }
        });
    }
    return out;
}

inline Tensor gelu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) {
        const double v = x.data()[i];
        out.data()[i] = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
    }
    if (detail::grad_wanted({&x})) {
        auto xn = x.node();
        auto on = out.node().get();
        detail::record_op(out, [xn, on] {
            xn->ensure_grad();
            constexpr double inv_sqrt_2pi = 0.3989422804014327;
            for (size_t i = 0; i < on->grad.size(); ++i) {
                const double v = xn->data[i];
                const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                xn->grad[i] += on->grad[i] * (cdf + v * pdf);
            }
        });
    }
    return out;
}

inline Tensor exp(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = std::exp(x.data()[i]);
    if (detail::grad_wanted({&x})) {
        auto xn = x.node();
        auto on = out.node().get();
        detail::record_op(out, [xn, on] {
            xn->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i] * on->data[i];
        });
    }
    return out;
}

namespace detail {

// Rows-of-last-axis view shared by the softmax family.
struct RowView {
    int rows;
    int cols;
};

inline RowView row_view(const Tensor& x, const char* op) {
    if (x.rank() == 1) return {1, x.shape()[0]};
    if (x.rank() == 2) return {x.shape()[0], x.shape()[1]};
    throw DimensionError(std::string(op) + ": rank-1 or rank-2 tensor required");
}

} // namespace detail

// Max-subtracted softmax along the last axis.
inline Tensor softmax(const Tensor& x) {
    const auto [m, n] = detail::row_view(x, "softmax");
    Tensor out = Tensor::zeros(x.shape());
    for (int i = 0; i < m; ++i) {
        const double* xi = x.data().data() + static_cast<size_t>(i) * n;
        double* oi = out.data().data() + static_cast<size_t>(i) * n;
        const double mx = *std::max_element(xi, xi + n);
        double z = 0.0;
        for (int j = 0; j < n; ++j) {
            oi[j] = std::exp(xi[j] - mx);
            z += oi[j];
        }
        for (int j = 0; j < n; ++j) oi[j] /= z;
    }
    if (detail::grad_wanted({&x})) {
        auto xn = x.node();
        auto on = out.node().get();
        detail::record_op(out, [xn, on, m, n] {
            xn->ensure_grad();
            for (int i = 0; i < m; ++i) {
                const double* g = on->grad.data() + static_cast<size_t>(i) * n;
                const double* y = on->data.data() + static_cast<size_t>(i) * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += g[j] * y[j];
                for (int j = 0; j < n; ++j)
                    xn->grad[static_cast<size_t>(i) * n + j] += y[j] * (g[j] - dot);
            }
        });
    }
    return out;
}

// The only sanctioned path to log-probabilities: log softmax with max
// subtraction. Loss code must not compose log(softmax(x)).
inline Tensor log_softmax(const Tensor& x) {
    const auto [m, n] = detail::row_view(x, "log_softmax");
    Tensor out = Tensor::zeros(x.shape());
    for (int i = 0; i < m; ++i) {
        const double* xi = x.data().data() + static_cast<size_t>(i) * n;
        double* oi = out.data().data() + static_cast<size_t>(i) * n;
        const double mx = *std::max_element(xi, xi + n);
        double z = 0.0;
        for (int j = 0; j < n; ++j) z += std::exp(xi[j] - mx);
        const double lse = mx + std::log(z);
        for (int j = 0; j < n; ++j) oi[j] = xi[j] - lse;
    }
    if (detail::grad_wanted({&x})) {
        auto xn = x.node();
        auto on = out.node().get();
        detail::record_op(out, [xn, on, m, n] {
            xn->ensure_grad();
            for (int i = 0; i < m; ++i) {
                const double* g = on->grad.data() + static_cast<size_t>(i) * n;
                const double* ls = on->data.data() + static_cast<size_t>(i) * n;
                double gsum = 0.0;
                for (int j = 0; j < n; ++j) gsum += g[j];
                for (int j = 0; j < n; ++j)
                    xn->grad[static_cast<size_t>(i) * n + j] += g[j] - std::exp(ls[j]) * gsum;
            }
        });
    }
    return out;
}

// Softmax over a square score matrix where row i attends to columns 0..i.
// Columns above the diagonal come out exactly zero.
inline Tensor causal_softmax(const Tensor& x) {
    if (x.rank() != 2 || x.shape()[0] != x.shape()[1])
        throw DimensionError("causal_softmax: square matrix required");
    const int n = x.shape()[0];
    Tensor out = Tensor::zeros({n, n});
    for (int i = 0; i < n; ++i) {
        const double* xi = x.data().data() + static_cast<size_t>(i) * n;
        double* oi = out.data().data() + static_cast<size_t>(i) * n;
        const double mx = *std::max_element(xi, xi + i + 1);
        double z = 0.0;
        for (int j = 0; j <= i; ++j) {
            oi[j] = std::exp(xi[j] - mx);
            z += oi[j];
        }
        for (int j = 0; j <= i; ++j) oi[j] /= z;
    }
    if (detail::grad_wanted({&x})) {
        auto xn = x.node();
        auto on = out.node().get();
        detail::record_op(out, [xn, on, n] {
            xn->ensure_grad();
            for (int i = 0; i < n; ++i) {
                const double* g = on->grad.data() + static_cast<size_t>(i) * n;
                const double* y = on->data.data() + static_cast<size_t>(i) * n;
                double dot = 0.0;
                for (int j = 0; j <= i; ++j) dot += g[j] * y[j];
                for (int j = 0; j <= i; ++j)
                    xn->grad[static_cast<size_t>(i) * n + j] += y[j] * (g[j] - dot);
            }
        });
    }
    return out;
}

inline Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    Tensor out = Tensor::scalar(s);
    if (detail::grad_wanted({&x})) {
        auto xn = x.node();
        auto on = out.node().get();
        detail::record_op(out, [xn, on] {
            xn->ensure_grad();
            for (double& gv : xn->grad) gv += on->grad[0];
        });
    }
    return out;
}

inline Tensor mean(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.size());
    double s = 0.0;
    for (double v : x.data()) s += v;
    Tensor out = Tensor::scalar(s * inv);
    if (detail::grad_wanted({&x})) {
        auto xn = x.node();
        auto on = out.node().get();
        detail::record_op(out, [xn, on, inv] {
            xn->ensure_grad();
            for (double& gv : xn->grad) gv += on->grad[0] * inv;
        });
    }
    return out;
}

inline Tensor gather(const Tensor& x, const std::vector<int>& ids) {
    if (x.rank() != 2) throw DimensionError("gather: rank-2 tensor required");
    const int m = x.shape()[0], n = x.shape()[1];
    if (static_cast<int>(ids.size()) != m) throw DimensionError("gather: one index per row required");
    for (int id : ids)
        if (id < 0 || id >= n) throw DimensionError("gather: index out of range");
    Tensor out = Tensor::zeros({m});
    for (int i = 0; i < m; ++i) out.data()[static_cast<size_t>(i)] = x.at(i, ids[static_cast<size_t>(i)]);
    if (detail::grad_wanted({&x})) {
        auto xn = x.node();
        auto on = out.node().get();
        detail::record_op(out, [xn, on, ids, n, m] {
            xn->ensure_grad();
            for (int i = 0; i < m; ++i)
                xn->grad[static_cast<size_t>(i) * n + ids[static_cast<size_t>(i)]] +=
                    on->grad[static_cast<size_t>(i)];
        });
    }
    return out;
}

// Mean NLL of `targets` under `logits` rows, through the stabilized pathway.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    Tensor ls = log_softmax(logits);
    Tensor picked = gather(ls, targets);
    return scale(mean(picked), -1.0);
}

} // namespace sytta
