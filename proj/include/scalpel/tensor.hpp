#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "scalpel/common.hpp"
#include "scalpel/rng.hpp"

// Dense row-major tensors with reverse-mode autodiff.
//
// Every differentiable primitive computes its forward result eagerly and,
// when a recording tape is supplied and any input participates in gradients,
// pushes one node (a VJP closure) onto the tape. Nodes are appended in
// execution order, which is a valid topological order, so backward() is a
// single reverse sweep that visits each node exactly once. Gradients
// accumulate additively; zero_grad() resets them.

namespace scalpel {

template <typename S>
struct TensorStorage {
    std::vector<i64> shape;
    std::vector<S> value;
    std::vector<S> grad;  // allocated iff requires_grad
    bool requires_grad = false;
    bool grad_seen = false;  // set once any backward contribution lands
};

inline std::string shape_str(const std::vector<i64>& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const std::vector<i64>& s) {
    std::size_t n = 1;
    for (i64 d : s) {
        if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

template <typename S>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<i64> shape, bool requires_grad = false) {
        auto st = std::make_shared<TensorStorage<S>>();
        st->shape = std::move(shape);
        st->value.assign(shape_numel(st->shape), S(0));
        set_requires(*st, requires_grad);
        return Tensor(std::move(st));
    }

    static Tensor from(std::vector<i64> shape, std::vector<S> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        auto st = std::make_shared<TensorStorage<S>>();
        st->shape = std::move(shape);
        st->value = std::move(data);
        set_requires(*st, requires_grad);
        return Tensor(std::move(st));
    }

    static Tensor scalar(S v) { return from({1}, {v}); }

    static Tensor randn(std::vector<i64> shape, Rng& rng, double stddev,
                        bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (S& x : t.storage_->value) x = static_cast<S>(rng.gaussian(0.0, stddev));
        return t;
    }

    bool defined() const { return static_cast<bool>(storage_); }
    const std::vector<i64>& shape() const { return storage_->shape; }
    std::size_t numel() const { return storage_->value.size(); }
    i64 dim(std::size_t i) const { return storage_->shape.at(i); }

    std::span<S> data() { return storage_->value; }
    std::span<const S> data() const { return storage_->value; }
    std::span<S> grad() {
        if (!storage_->requires_grad) throw ContractError("tensor does not require grad");
        return storage_->grad;
    }
    std::span<const S> grad() const {
        if (!storage_->requires_grad) throw ContractError("tensor does not require grad");
        return storage_->grad;
    }

    bool requires_grad() const { return storage_->requires_grad; }
    void set_requires_grad(bool b) { set_requires(*storage_, b); }

    void zero_grad() {
        if (storage_->requires_grad) {
            std::fill(storage_->grad.begin(), storage_->grad.end(), S(0));
            storage_->grad_seen = false;
        }
    }

    S item() const {
        if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
        return storage_->value[0];
    }

    // Deep copy of values; gradient state is not copied.
    Tensor clone() const {
        auto st = std::make_shared<TensorStorage<S>>();
        st->shape = storage_->shape;
        st->value = storage_->value;
        set_requires(*st, storage_->requires_grad);
        return Tensor(std::move(st));
    }

    std::shared_ptr<TensorStorage<S>> storage() const { return storage_; }

private:
    explicit Tensor(std::shared_ptr<TensorStorage<S>> st) : storage_(std::move(st)) {}

    static void set_requires(TensorStorage<S>& st, bool b) {
        st.requires_grad = b;
        if (b && st.grad.size() != st.value.size()) st.grad.assign(st.value.size(), S(0));
        if (!b) {
            st.grad.clear();
            st.grad_seen = false;
        }
    }

    std::shared_ptr<TensorStorage<S>> storage_;
};

template <typename S>
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    void record(std::shared_ptr<TensorStorage<S>> out, std::function<void()> vjp) {
        nodes_.push_back({std::move(out), std::move(vjp)});
    }

    // Seeds d(loss)/d(loss) = 1 and runs every node's VJP in reverse creation
    // order. Each node's output gradient is consumed exactly once (all
    // contributions land before its own VJP runs) and cleared afterwards, so
    // intermediates start fresh on the next sweep while leaf gradients keep
    // accumulating across repeated backward calls.
    void backward(const Tensor<S>& loss) {
        if (loss.numel() != 1)
            throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
        if (!loss.requires_grad())
            throw ContractError("backward: loss does not participate in gradients");
        auto st = loss.storage();
        st->grad[0] += S(1);
        st->grad_seen = true;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            nodes_[i].vjp();
            auto& out = nodes_[i].out;
            if (out->requires_grad) {
                std::fill(out->grad.begin(), out->grad.end(), S(0));
                out->grad_seen = false;
            }
        }
    }

private:
    struct Node {
        std::shared_ptr<TensorStorage<S>> out;
        std::function<void()> vjp;
    };
    bool recording_;
    std::vector<Node> nodes_;
};

namespace detail {

template <typename S>
bool will_record(const Tape<S>& tp, std::initializer_list<bool> needs_grad) {
    if (!tp.recording()) return false;
    for (bool r : needs_grad)
        if (r) return true;
    return false;
}

// Adds src into dst's grad buffer if dst participates.
template <typename S>
void add_grad(const std::shared_ptr<TensorStorage<S>>& dst, const S* src, std::size_t n) {
    if (!dst->requires_grad) return;
    S* g = dst->grad.data();
    for (std::size_t i = 0; i < n; ++i) g[i] += src[i];
    dst->grad_seen = true;
}

inline void check_same_shape(const std::vector<i64>& a, const std::vector<i64>& b,
                             const char* op) {
    if (a != b)
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
}

// Rows/cols view of a tensor treated as 2-D (last dim = cols).
template <typename S>
std::pair<i64, i64> as_2d(const Tensor<S>& t, const char* op) {
    const auto& sh = t.shape();
    if (sh.empty()) throw ShapeError(std::string(op) + ": 0-d tensor");
    i64 cols = sh.back();
    i64 rows = 1;
    for (std::size_t i = 0; i + 1 < sh.size(); ++i) rows *= sh[i];
    return {rows, cols};
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename S>
Tensor<S> add(Tape<S>& tp, const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a.shape(), b.shape(), "add");
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const std::size_t n = out.numel();
    const S* pa = a.data().data();
    const S* pb = b.data().data();
    S* po = out.data().data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (detail::will_record(tp, {a.requires_grad(), b.requires_grad()})) {
        out.set_requires_grad(true);
        auto sa = a.storage(), sb = b.storage(), so = out.storage();
        tp.record(so, [sa, sb, so, n] {
            if (!so->grad_seen) return;
            detail::add_grad(sa, so->grad.data(), n);
            detail::add_grad(sb, so->grad.data(), n);
        });
    }
    return out;
}

template <typename S>
Tensor<S> sub(Tape<S>& tp, const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a.shape(), b.shape(), "sub");
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const std::size_t n = out.numel();
    const S* pa = a.data().data();
    const S* pb = b.data().data();
    S* po = out.data().data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    if (detail::will_record(tp, {a.requires_grad(), b.requires_grad()})) {
        out.set_requires_grad(true);
        auto sa = a.storage(), sb = b.storage(), so = out.storage();
        tp.record(so, [sa, sb, so, n] {
            if (!so->grad_seen) return;
            detail::add_grad(sa, so->grad.data(), n);
            if (sb->requires_grad) {
                S* g = sb->grad.data();
                const S* og = so->grad.data();
                for (std::size_t i = 0; i < n; ++i) g[i] -= og[i];
                sb->grad_seen = true;
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> mul(Tape<S>& tp, const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a.shape(), b.shape(), "mul");
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const std::size_t n = out.numel();
    const S* pa = a.data().data();
    const S* pb = b.data().data();
    S* po = out.data().data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    if (detail::will_record(tp, {a.requires_grad(), b.requires_grad()})) {
        out.set_requires_grad(true);
        auto sa = a.storage(), sb = b.storage(), so = out.storage();
        tp.record(so, [sa, sb, so, n] {
            if (!so->grad_seen) return;
            const S* og = so->grad.data();
            if (sa->requires_grad) {
                S* g = sa->grad.data();
                const S* vb = sb->value.data();
                for (std::size_t i = 0; i < n; ++i) g[i] += og[i] * vb[i];
                sa->grad_seen = true;
            }
            if (sb->requires_grad) {
                S* g = sb->grad.data();
                const S* va = sa->value.data();
                for (std::size_t i = 0; i < n; ++i) g[i] += og[i] * va[i];
                sb->grad_seen = true;
            }
        });
    }
    return out;
}

/// Multiplies every element by a compile-time-known constant.
template <typename S>
Tensor<S> scale(Tape<S>& tp, const Tensor<S>& a, S c) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const std::size_t n = out.numel();
    const S* pa = a.data().data();
    S* po = out.data().data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * c;
    if (detail::will_record(tp, {a.requires_grad()})) {
        out.set_requires_grad(true);
        auto sa = a.storage(), so = out.storage();
        tp.record(so, [sa, so, n, c] {
            if (!so->grad_seen || !sa->requires_grad) return;
            S* g = sa->grad.data();
            const S* og = so->grad.data();
            for (std::size_t i = 0; i < n; ++i) g[i] += og[i] * c;
            sa->grad_seen = true;
        });
    }
    return out;
}

/// y = 1 / sqrt(x + eps), elementwise.
template <typename S>
Tensor<S> rsqrt(Tape<S>& tp, const Tensor<S>& a, S eps = S(0)) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const std::size_t n = out.numel();
    const S* pa = a.data().data();
    S* po = out.data().data();
    for (std::size_t i = 0; i < n; ++i) po[i] = S(1) / std::sqrt(pa[i] + eps);
    if (detail::will_record(tp, {a.requires_grad()})) {
        out.set_requires_grad(true);
        auto sa = a.storage(), so = out.storage();
        tp.record(so, [sa, so, n] {
            if (!so->grad_seen || !sa->requires_grad) return;
            S* g = sa->grad.data();
            const S* og = so->grad.data();
            const S* y = so->value.data();
            for (std::size_t i = 0; i < n; ++i) g[i] += og[i] * S(-0.5) * y[i] * y[i] * y[i];
            sa->grad_seen = true;
        });
    }
    return out;
}

/// y = x * sigmoid(x).
template <typename S>
Tensor<S> silu(Tape<S>& tp, const Tensor<S>& a) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const std::size_t n = out.numel();
    const S* pa = a.data().data();
    S* po = out.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        const S sg = S(1) / (S(1) + std::exp(-pa[i]));
        po[i] = pa[i] * sg;
    }
    if (detail::will_record(tp, {a.requires_grad()})) {
        out.set_requires_grad(true);
        auto sa = a.storage(), so = out.storage();
        tp.record(so, [sa, so, n] {
            if (!so->grad_seen || !sa->requires_grad) return;
            S* g = sa->grad.data();
            const S* og = so->grad.data();
            const S* x = sa->value.data();
            for (std::size_t i = 0; i < n; ++i) {
                const S sg = S(1) / (S(1) + std::exp(-x[i]));
                g[i] += og[i] * (sg + x[i] * sg * (S(1) - sg));
            }
            sa->grad_seen = true;
        });
    }
    return out;
}

// ---------------------------------------------------------------- matmul family

/// Standard matrix product [m x k] * [k x n] -> [m x n].
template <typename S>
Tensor<S> matmul(Tape<S>& tp, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const i64 m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<S> out = Tensor<S>::zeros({m, n});
    const S* pa = a.data().data();
    const S* pb = b.data().data();
    S* po = out.data().data();
    for (i64 i = 0; i < m; ++i)
        for (i64 l = 0; l < k; ++l) {
            const S s = pa[i * k + l];
            const S* brow = pb + l * n;
            S* orow = po + i * n;
            for (i64 j = 0; j < n; ++j) orow[j] += s * brow[j];
        }
    if (detail::will_record(tp, {a.requires_grad(), b.requires_grad()})) {
        out.set_requires_grad(true);
        auto sa = a.storage(), sb = b.storage(), so = out.storage();
        tp.record(so, [sa, sb, so, m, k, n] {
            if (!so->grad_seen) return;
            const S* og = so->grad.data();
            if (sa->requires_grad) {
                // dA = dC * B^T, with B^T materialized for contiguous access.
                std::vector<S> bt(static_cast<std::size_t>(n * k));
                const S* vb = sb->value.data();
                for (i64 l = 0; l < k; ++l)
                    for (i64 j = 0; j < n; ++j) bt[j * k + l] = vb[l * n + j];
                S* g = sa->grad.data();
                for (i64 i = 0; i < m; ++i)
                    for (i64 j = 0; j < n; ++j) {
                        const S s = og[i * n + j];
                        const S* btr = bt.data() + j * k;
                        S* grow = g + i * k;
                        for (i64 l = 0; l < k; ++l) grow[l] += s * btr[l];
                    }
                sa->grad_seen = true;
            }
            if (sb->requires_grad) {
                // dB = A^T * dC.
                S* g = sb->grad.data();
                const S* va = sa->value.data();
                for (i64 i = 0; i < m; ++i)
                    for (i64 l = 0; l < k; ++l) {
                        const S s = va[i * k + l];
                        const S* orow = og + i * n;
                        S* grow = g + l * n;
                        for (i64 j = 0; j < n; ++j) grow[j] += s * orow[j];
                    }
                sb->grad_seen = true;
            }
        });
    }
    return out;
}

/// y = x * w^T for weights stored [d_out x d_in]: the projection primitive.
template <typename S>
Tensor<S> linear(Tape<S>& tp, const Tensor<S>& x, const Tensor<S>& w) {
    if (x.shape().size() != 2 || w.shape().size() != 2 || x.dim(1) != w.dim(1))
        throw ShapeError("linear: incompatible shapes " + shape_str(x.shape()) + " vs " +
                         shape_str(w.shape()));
    const i64 n = x.dim(0), din = x.dim(1), dout = w.dim(0);
    Tensor<S> out = Tensor<S>::zeros({n, dout});
    {
        // Materialize w^T so the inner loop is a contiguous axpy.
        std::vector<S> wt(static_cast<std::size_t>(din * dout));
        const S* pw = w.data().data();
        for (i64 o = 0; o < dout; ++o)
            for (i64 l = 0; l < din; ++l) wt[l * dout + o] = pw[o * din + l];
        const S* px = x.data().data();
        S* po = out.data().data();
        for (i64 i = 0; i < n; ++i)
            for (i64 l = 0; l < din; ++l) {
                const S s = px[i * din + l];
                const S* wrow = wt.data() + l * dout;
                S* orow = po + i * dout;
                for (i64 j = 0; j < dout; ++j) orow[j] += s * wrow[j];
            }
    }
    if (detail::will_record(tp, {x.requires_grad(), w.requires_grad()})) {
        out.set_requires_grad(true);
        auto sx = x.storage(), sw = w.storage(), so = out.storage();
        tp.record(so, [sx, sw, so, n, din, dout] {
            if (!so->grad_seen) return;
            const S* og = so->grad.data();
            if (sx->requires_grad) {
                // dX = dY * W.
                S* g = sx->grad.data();
                const S* vw = sw->value.data();
                for (i64 i = 0; i < n; ++i)
                    for (i64 j = 0; j < dout; ++j) {
                        const S s = og[i * dout + j];
                        const S* wrow = vw + j * din;
                        S* grow = g + i * din;
                        for (i64 l = 0; l < din; ++l) grow[l] += s * wrow[l];
                    }
                sx->grad_seen = true;
            }
            if (sw->requires_grad) {
                // dW = dY^T * X.
                S* g = sw->grad.data();
                const S* vx = sx->value.data();
                for (i64 i = 0; i < n; ++i)
                    for (i64 j = 0; j < dout; ++j) {
                        const S s = og[i * dout + j];
                        const S* xrow = vx + i * din;
                        S* grow = g + j * din;
                        for (i64 l = 0; l < din; ++l) grow[l] += s * xrow[l];
                    }
                sw->grad_seen = true;
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> transpose(Tape<S>& tp, const Tensor<S>& a) {
    if (a.shape().size() != 2)
        throw ShapeError("transpose: expected 2-d tensor, got " + shape_str(a.shape()));
    const i64 m = a.dim(0), n = a.dim(1);
    Tensor<S> out = Tensor<S>::zeros({n, m});
    const S* pa = a.data().data();
    S* po = out.data().data();
    for (i64 i = 0; i < m; ++i)
        for (i64 j = 0; j < n; ++j) po[j * m + i] = pa[i * n + j];
    if (detail::will_record(tp, {a.requires_grad()})) {
        out.set_requires_grad(true);
        auto sa = a.storage(), so = out.storage();
        tp.record(so, [sa, so, m, n] {
            if (!so->grad_seen || !sa->requires_grad) return;
            S* g = sa->grad.data();
            const S* og = so->grad.data();
            for (i64 i = 0; i < m; ++i)
                for (i64 j = 0; j < n; ++j) g[i * n + j] += og[j * m + i];
            sa->grad_seen = true;
        });
    }
    return out;
}

/// Shape change with a copy; element order is preserved.
template <typename S>
Tensor<S> reshape(Tape<S>& tp, const Tensor<S>& a, std::vector<i64> shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
    Tensor<S> out = Tensor<S>::from(std::move(shape),
                                    std::vector<S>(a.data().begin(), a.data().end()));
    if (detail::will_record(tp, {a.requires_grad()})) {
        out.set_requires_grad(true);
        auto sa = a.storage(), so = out.storage();
        const std::size_t n = a.numel();
        tp.record(so, [sa, so, n] {
            if (!so->grad_seen) return;
            detail::add_grad(sa, so->grad.data(), n);
        });
    }
    return out;
}

// ---------------------------------------------------------------- gather/scatter

/// Row gather: out[i, :] = table[indices[i], :]. The gradient scatter-adds
/// back into the table, which makes this double as embedding lookup.
template <typename S>
Tensor<S> take_rows(Tape<S>& tp, const Tensor<S>& table, const std::vector<i64>& indices) {
    if (table.shape().size() != 2)
        throw ShapeError("take_rows: expected 2-d table, got " + shape_str(table.shape()));
    const i64 rows = table.dim(0), cols = table.dim(1);
    for (i64 idx : indices)
        if (idx < 0 || idx >= rows)
            throw InputError("take_rows: index " + std::to_string(idx) + " out of range [0," +
                             std::to_string(rows) + ")");
    Tensor<S> out = Tensor<S>::zeros({static_cast<i64>(indices.size()), cols});
    const S* pt = table.data().data();
    S* po = out.data().data();
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::copy(pt + indices[i] * cols, pt + (indices[i] + 1) * cols, po + i * cols);
    if (detail::will_record(tp, {table.requires_grad()})) {
        out.set_requires_grad(true);
        auto st = table.storage(), so = out.storage();
        auto idx = indices;
        tp.record(so, [st, so, idx, cols] {
            if (!so->grad_seen || !st->requires_grad) return;
            S* g = st->grad.data();
            const S* og = so->grad.data();
            for (std::size_t i = 0; i < idx.size(); ++i) {
                S* grow = g + idx[i] * cols;
                const S* orow = og + static_cast<i64>(i) * cols;
                for (i64 j = 0; j < cols; ++j) grow[j] += orow[j];
            }
            st->grad_seen = true;
        });
    }
    return out;
}

/// Element gather: out[i] = x[rows[i], cols[i]].
template <typename S>
Tensor<S> gather_rc(Tape<S>& tp, const Tensor<S>& x, const std::vector<i64>& rows,
                    const std::vector<i64>& cols) {
    auto [r, c] = detail::as_2d(x, "gather_rc");
    if (rows.size() != cols.size()) throw ShapeError("gather_rc: rows/cols length mismatch");
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (rows[i] < 0 || rows[i] >= r || cols[i] < 0 || cols[i] >= c)
            throw InputError("gather_rc: index (" + std::to_string(rows[i]) + "," +
                             std::to_string(cols[i]) + ") out of range for " +
                             shape_str(x.shape()));
    Tensor<S> out = Tensor<S>::zeros({static_cast<i64>(rows.size())});
    const S* px = x.data().data();
    S* po = out.data().data();
    for (std::size_t i = 0; i < rows.size(); ++i) po[i] = px[rows[i] * c + cols[i]];
    if (detail::will_record(tp, {x.requires_grad()})) {
        out.set_requires_grad(true);
        auto sx = x.storage(), so = out.storage();
        auto rr = rows;
        auto cc = cols;
        tp.record(so, [sx, so, rr, cc, c = c] {
            if (!so->grad_seen || !sx->requires_grad) return;
            S* g = sx->grad.data();
            const S* og = so->grad.data();
            for (std::size_t i = 0; i < rr.size(); ++i) g[rr[i] * c + cc[i]] += og[i];
            sx->grad_seen = true;
        });
    }
    return out;
}

// ---------------------------------------------------------------- reductions

template <typename S>
Tensor<S> sum(Tape<S>& tp, const Tensor<S>& a) {
    const std::size_t n = a.numel();
    const S* pa = a.data().data();
    S acc = S(0);
    for (std::size_t i = 0; i < n; ++i) acc += pa[i];
    Tensor<S> out = Tensor<S>::scalar(acc);
    if (detail::will_record(tp, {a.requires_grad()})) {
        out.set_requires_grad(true);
        auto sa = a.storage(), so = out.storage();
        tp.record(so, [sa, so, n] {
            if (!so->grad_seen || !sa->requires_grad) return;
            const S g = so->grad[0];
            S* pg = sa->grad.data();
            for (std::size_t i = 0; i < n; ++i) pg[i] += g;
            sa->grad_seen = true;
        });
    }
    return out;
}

template <typename S>
Tensor<S> mean(Tape<S>& tp, const Tensor<S>& a) {
    if (a.numel() == 0) throw ContractError("mean of empty tensor");
    return scale(tp, sum(tp, a), S(1) / static_cast<S>(a.numel()));
}

/// Sum of absolute values; subgradient 0 at exact zeros.
template <typename S>
Tensor<S> l1_norm(Tape<S>& tp, const Tensor<S>& a) {
    const std::size_t n = a.numel();
    const S* pa = a.data().data();
    S acc = S(0);
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(pa[i]);
    Tensor<S> out = Tensor<S>::scalar(acc);
    if (detail::will_record(tp, {a.requires_grad()})) {
        out.set_requires_grad(true);
        auto sa = a.storage(), so = out.storage();
        tp.record(so, [sa, so, n] {
            if (!so->grad_seen || !sa->requires_grad) return;
            const S g = so->grad[0];
            S* pg = sa->grad.data();
            const S* x = sa->value.data();
            for (std::size_t i = 0; i < n; ++i)
                pg[i] += g * (x[i] > S(0) ? S(1) : (x[i] < S(0) ? S(-1) : S(0)));
            sa->grad_seen = true;
        });
    }
    return out;
}

/// Sum of squares (squared Frobenius/L2 norm).
template <typename S>
Tensor<S> l2_norm_sq(Tape<S>& tp, const Tensor<S>& a) {
    const std::size_t n = a.numel();
    const S* pa = a.data().data();
    S acc = S(0);
    for (std::size_t i = 0; i < n; ++i) acc += pa[i] * pa[i];
    Tensor<S> out = Tensor<S>::scalar(acc);
    if (detail::will_record(tp, {a.requires_grad()})) {
        out.set_requires_grad(true);
        auto sa = a.storage(), so = out.storage();
        tp.record(so, [sa, so, n] {
            if (!so->grad_seen || !sa->requires_grad) return;
            const S g = so->grad[0];
            S* pg = sa->grad.data();
            const S* x = sa->value.data();
            for (std::size_t i = 0; i < n; ++i) pg[i] += g * S(2) * x[i];
            sa->grad_seen = true;
        });
    }
    return out;
}

/// Per-row sum over the last dimension: [n x m] -> [n].
template <typename S>
Tensor<S> row_sum(Tape<S>& tp, const Tensor<S>& a) {
    auto [rows, cols] = detail::as_2d(a, "row_sum");
    Tensor<S> out = Tensor<S>::zeros({rows});
    const S* pa = a.data().data();
    S* po = out.data().data();
    for (i64 i = 0; i < rows; ++i) {
        S acc = S(0);
        const S* arow = pa + i * cols;
        for (i64 j = 0; j < cols; ++j) acc += arow[j];
        po[i] = acc;
    }
    if (detail::will_record(tp, {a.requires_grad()})) {
        out.set_requires_grad(true);
        auto sa = a.storage(), so = out.storage();
        tp.record(so, [sa, so, rows, cols] {
            if (!so->grad_seen || !sa->requires_grad) return;
            S* g = sa->grad.data();
            const S* og = so->grad.data();
            for (i64 i = 0; i < rows; ++i) {
                const S s = og[i];
                S* grow = g + i * cols;
                for (i64 j = 0; j < cols; ++j) grow[j] += s;
            }
            sa->grad_seen = true;
        });
    }
    return out;
}

template <typename S>
Tensor<S> row_mean(Tape<S>& tp, const Tensor<S>& a) {
    auto [rows, cols] = detail::as_2d(a, "row_mean");
    (void)rows;
    if (cols == 0) throw ContractError("row_mean over zero columns");
    return scale(tp, row_sum(tp, a), S(1) / static_cast<S>(cols));
}

/// Per-segment mean of a vector: out[k] = mean of x[i] with seg[i] == k.
template <typename S>
Tensor<S> segment_mean(Tape<S>& tp, const Tensor<S>& x, const std::vector<i64>& seg,
                       i64 n_segments) {
    if (x.shape().size() != 1 || static_cast<std::size_t>(x.dim(0)) != seg.size())
        throw ShapeError("segment_mean: expected matching 1-d input");
    std::vector<i64> count(static_cast<std::size_t>(n_segments), 0);
    for (i64 s : seg) {
        if (s < 0 || s >= n_segments) throw InputError("segment_mean: segment id out of range");
        ++count[static_cast<std::size_t>(s)];
    }
    for (i64 c : count)
        if (c == 0) throw InputError("segment_mean: empty segment");
    Tensor<S> out = Tensor<S>::zeros({n_segments});
    const S* px = x.data().data();
    S* po = out.data().data();
    for (std::size_t i = 0; i < seg.size(); ++i) po[seg[i]] += px[i];
    for (i64 k = 0; k < n_segments; ++k) po[k] /= static_cast<S>(count[k]);
    if (detail::will_record(tp, {x.requires_grad()})) {
        out.set_requires_grad(true);
        auto sx = x.storage(), so = out.storage();
        auto sg = seg;
        auto cnt = count;
        tp.record(so, [sx, so, sg, cnt] {
            if (!so->grad_seen || !sx->requires_grad) return;
            S* g = sx->grad.data();
            const S* og = so->grad.data();
            for (std::size_t i = 0; i < sg.size(); ++i)
                g[i] += og[sg[i]] / static_cast<S>(cnt[sg[i]]);
            sx->grad_seen = true;
        });
    }
    return out;
}

// ---------------------------------------------------------------- broadcasting scales

/// Multiplies row i of x by s[i].
template <typename S>
Tensor<S> row_scale(Tape<S>& tp, const Tensor<S>& x, const Tensor<S>& s) {
    auto [rows, cols] = detail::as_2d(x, "row_scale");
    if (s.shape().size() != 1 || s.dim(0) != rows)
        throw ShapeError("row_scale: scale shape " + shape_str(s.shape()) + " does not match " +
                         shape_str(x.shape()));
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    const S* px = x.data().data();
    const S* ps = s.data().data();
    S* po = out.data().data();
    for (i64 i = 0; i < rows; ++i) {
        const S c = ps[i];
        for (i64 j = 0; j < cols; ++j) po[i * cols + j] = px[i * cols + j] * c;
    }
    if (detail::will_record(tp, {x.requires_grad(), s.requires_grad()})) {
        out.set_requires_grad(true);
        auto sx = x.storage(), ss = s.storage(), so = out.storage();
        tp.record(so, [sx, ss, so, rows, cols] {
            if (!so->grad_seen) return;
            const S* og = so->grad.data();
            if (sx->requires_grad) {
                S* g = sx->grad.data();
                const S* vs = ss->value.data();
                for (i64 i = 0; i < rows; ++i) {
                    const S c = vs[i];
                    for (i64 j = 0; j < cols; ++j) g[i * cols + j] += og[i * cols + j] * c;
                }
                sx->grad_seen = true;
            }
            if (ss->requires_grad) {
                S* g = ss->grad.data();
                const S* vx = sx->value.data();
                for (i64 i = 0; i < rows; ++i) {
                    S acc = S(0);
                    for (i64 j = 0; j < cols; ++j) acc += og[i * cols + j] * vx[i * cols + j];
                    g[i] += acc;
                }
                ss->grad_seen = true;
            }
        });
    }
    return out;
}

/// Multiplies column j of x by g[j] (feature-wise gain, e.g. an RMSNorm scale).
template <typename S>
Tensor<S> col_scale(Tape<S>& tp, const Tensor<S>& x, const Tensor<S>& gvec) {
    auto [rows, cols] = detail::as_2d(x, "col_scale");
    if (gvec.shape().size() != 1 || gvec.dim(0) != cols)
        throw ShapeError("col_scale: gain shape " + shape_str(gvec.shape()) +
                         " does not match " + shape_str(x.shape()));
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    const S* px = x.data().data();
    const S* pg = gvec.data().data();
    S* po = out.data().data();
    for (i64 i = 0; i < rows; ++i)
        for (i64 j = 0; j < cols; ++j) po[i * cols + j] = px[i * cols + j] * pg[j];
    if (detail::will_record(tp, {x.requires_grad(), gvec.requires_grad()})) {
        out.set_requires_grad(true);
        auto sx = x.storage(), sg = gvec.storage(), so = out.storage();
        tp.record(so, [sx, sg, so, rows, cols] {
            if (!so->grad_seen) return;
            const S* og = so->grad.data();
            if (sx->requires_grad) {
                S* g = sx->grad.data();
                const S* vg = sg->value.data();
                for (i64 i = 0; i < rows; ++i)
                    for (i64 j = 0; j < cols; ++j) g[i * cols + j] += og[i * cols + j] * vg[j];
                sx->grad_seen = true;
            }
            if (sg->requires_grad) {
                S* g = sg->grad.data();
                const S* vx = sx->value.data();
                for (i64 i = 0; i < rows; ++i)
                    for (i64 j = 0; j < cols; ++j) g[j] += og[i * cols + j] * vx[i * cols + j];
                sg->grad_seen = true;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------- head plumbing

/// [B*T, H*Hd] -> [B*H*T, Hd]: groups rows by (batch, head) for batched
/// attention matmuls. Pure permutation.
template <typename S>
Tensor<S> split_heads(Tape<S>& tp, const Tensor<S>& x, i64 batch, i64 seq, i64 heads) {
    if (x.shape().size() != 2 || x.dim(0) != batch * seq || x.dim(1) % heads != 0)
        throw ShapeError("split_heads: bad input " + shape_str(x.shape()));
    const i64 hd = x.dim(1) / heads;
    const i64 dm = x.dim(1);
    Tensor<S> out = Tensor<S>::zeros({batch * heads * seq, hd});
    const S* px = x.data().data();
    S* po = out.data().data();
    for (i64 b = 0; b < batch; ++b)
        for (i64 h = 0; h < heads; ++h)
            for (i64 t = 0; t < seq; ++t)
                std::copy(px + (b * seq + t) * dm + h * hd, px + (b * seq + t) * dm + (h + 1) * hd,
                          po + ((b * heads + h) * seq + t) * hd);
    if (detail::will_record(tp, {x.requires_grad()})) {
        out.set_requires_grad(true);
        auto sx = x.storage(), so = out.storage();
        tp.record(so, [sx, so, batch, seq, heads, hd, dm] {
            if (!so->grad_seen || !sx->requires_grad) return;
            S* g = sx->grad.data();
            const S* og = so->grad.data();
            for (i64 b = 0; b < batch; ++b)
                for (i64 h = 0; h < heads; ++h)
                    for (i64 t = 0; t < seq; ++t) {
                        const S* src = og + ((b * heads + h) * seq + t) * hd;
                        S* dst = g + (b * seq + t) * dm + h * hd;
                        for (i64 j = 0; j < hd; ++j) dst[j] += src[j];
                    }
            sx->grad_seen = true;
        });
    }
    return out;
}

/// Inverse of split_heads: [B*H*T, Hd] -> [B*T, H*Hd].
template <typename S>
Tensor<S> merge_heads(Tape<S>& tp, const Tensor<S>& x, i64 batch, i64 seq, i64 heads) {
    if (x.shape().size() != 2 || x.dim(0) != batch * heads * seq)
        throw ShapeError("merge_heads: bad input " + shape_str(x.shape()));
    const i64 hd = x.dim(1);
    const i64 dm = heads * hd;
    Tensor<S> out = Tensor<S>::zeros({batch * seq, dm});
    const S* px = x.data().data();
    S* po = out.data().data();
    for (i64 b = 0; b < batch; ++b)
        for (i64 h = 0; h < heads; ++h)
            for (i64 t = 0; t < seq; ++t)
                std::copy(px + ((b * heads + h) * seq + t) * hd,
                          px + ((b * heads + h) * seq + t + 1) * hd,
                          po + (b * seq + t) * dm + h * hd);
    if (detail::will_record(tp, {x.requires_grad()})) {
        out.set_requires_grad(true);
        auto sx = x.storage(), so = out.storage();
        tp.record(so, [sx, so, batch, seq, heads, hd, dm] {
            if (!so->grad_seen || !sx->requires_grad) return;
            S* g = sx->grad.data();
            const S* og = so->grad.data();
            for (i64 b = 0; b < batch; ++b)
                for (i64 h = 0; h < heads; ++h)
                    for (i64 t = 0; t < seq; ++t) {
                        const S* src = og + (b * seq + t) * dm + h * hd;
                        S* dst = g + ((b * heads + h) * seq + t) * hd;
                        for (i64 j = 0; j < hd; ++j) dst[j] += src[j];
                    }
            sx->grad_seen = true;
        });
    }
    return out;
}

/// Grouped matmul: for each of `groups` blocks, [m x k] * [k x n].
template <typename S>
Tensor<S> bmm(Tape<S>& tp, const Tensor<S>& a, const Tensor<S>& b, i64 groups) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(0) % groups != 0 ||
        b.dim(0) % groups != 0)
        throw ShapeError("bmm: bad shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const i64 m = a.dim(0) / groups, k = a.dim(1), n = b.dim(1);
    if (b.dim(0) / groups != k)
        throw ShapeError("bmm: inner dims disagree " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Tensor<S> out = Tensor<S>::zeros({groups * m, n});
    const S* pa = a.data().data();
    const S* pb = b.data().data();
    S* po = out.data().data();
    for (i64 g = 0; g < groups; ++g) {
        const S* ag = pa + g * m * k;
        const S* bg = pb + g * k * n;
        S* og = po + g * m * n;
        for (i64 i = 0; i < m; ++i)
            for (i64 l = 0; l < k; ++l) {
                const S s = ag[i * k + l];
                const S* brow = bg + l * n;
                S* orow = og + i * n;
                for (i64 j = 0; j < n; ++j) orow[j] += s * brow[j];
            }
    }
    if (detail::will_record(tp, {a.requires_grad(), b.requires_grad()})) {
        out.set_requires_grad(true);
        auto sa = a.storage(), sb = b.storage(), so = out.storage();
        tp.record(so, [sa, sb, so, groups, m, k, n] {
            if (!so->grad_seen) return;
            const S* og = so->grad.data();
            if (sa->requires_grad) {
                S* ga = sa->grad.data();
                const S* vb = sb->value.data();
                std::vector<S> bt(static_cast<std::size_t>(n * k));
                for (i64 g = 0; g < groups; ++g) {
                    const S* bg = vb + g * k * n;
                    for (i64 l = 0; l < k; ++l)
                        for (i64 j = 0; j < n; ++j) bt[j * k + l] = bg[l * n + j];
                    const S* ogg = og + g * m * n;
                    S* gag = ga + g * m * k;
                    for (i64 i = 0; i < m; ++i)
                        for (i64 j = 0; j < n; ++j) {
                            const S s = ogg[i * n + j];
                            const S* btr = bt.data() + j * k;
                            S* grow = gag + i * k;
                            for (i64 l = 0; l < k; ++l) grow[l] += s * btr[l];
                        }
                }
                sa->grad_seen = true;
            }
            if (sb->requires_grad) {
                S* gb = sb->grad.data();
                const S* va = sa->value.data();
                for (i64 g = 0; g < groups; ++g) {
                    const S* ag = va + g * m * k;
                    const S* ogg = og + g * m * n;
                    S* gbg = gb + g * k * n;
                    for (i64 i = 0; i < m; ++i)
                        for (i64 l = 0; l < k; ++l) {
                            const S s = ag[i * k + l];
                            const S* orow = ogg + i * n;
                            S* grow = gbg + l * n;
                            for (i64 j = 0; j < n; ++j) grow[j] += s * orow[j];
                        }
                }
                sb->grad_seen = true;
            }
        });
    }
    return out;
}

/// Grouped a * b^T: for each block, [m x k] * [n x k]^T -> [m x n].
template <typename S>
Tensor<S> bmm_nt(Tape<S>& tp, const Tensor<S>& a, const Tensor<S>& b, i64 groups) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(1) ||
        a.dim(0) % groups != 0 || b.dim(0) % groups != 0)
        throw ShapeError("bmm_nt: bad shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const i64 m = a.dim(0) / groups, k = a.dim(1), n = b.dim(0) / groups;
    Tensor<S> out = Tensor<S>::zeros({groups * m, n});
    const S* pa = a.data().data();
    const S* pb = b.data().data();
    S* po = out.data().data();
    std::vector<S> bt(static_cast<std::size_t>(k * n));
    for (i64 g = 0; g < groups; ++g) {
        const S* bg = pb + g * n * k;
        for (i64 j = 0; j < n; ++j)
            for (i64 l = 0; l < k; ++l) bt[l * n + j] = bg[j * k + l];
        const S* ag = pa + g * m * k;
        S* ogr = po + g * m * n;
        for (i64 i = 0; i < m; ++i)
            for (i64 l = 0; l < k; ++l) {
                const S s = ag[i * k + l];
                const S* brow = bt.data() + l * n;
                S* orow = ogr + i * n;
                for (i64 j = 0; j < n; ++j) orow[j] += s * brow[j];
            }
    }
    if (detail::will_record(tp, {a.requires_grad(), b.requires_grad()})) {
        out.set_requires_grad(true);
        auto sa = a.storage(), sb = b.storage(), so = out.storage();
        tp.record(so, [sa, sb, so, groups, m, k, n] {
            if (!so->grad_seen) return;
            const S* og = so->grad.data();
            if (sa->requires_grad) {
                // dA = dC * B.
                S* ga = sa->grad.data();
                const S* vb = sb->value.data();
                for (i64 g = 0; g < groups; ++g) {
                    const S* ogg = og + g * m * n;
                    const S* bg = vb + g * n * k;
                    S* gag = ga + g * m * k;
                    for (i64 i = 0; i < m; ++i)
                        for (i64 j = 0; j < n; ++j) {
                            const S s = ogg[i * n + j];
                            const S* brow = bg + j * k;
                            S* grow = gag + i * k;
                            for (i64 l = 0; l < k; ++l) grow[l] += s * brow[l];
                        }
                }
                sa->grad_seen = true;
            }
            if (sb->requires_grad) {
                // dB = dC^T * A.
                S* gb = sb->grad.data();
                const S* va = sa->value.data();
                for (i64 g = 0; g < groups; ++g) {
                    const S* ogg = og + g * m * n;
                    const S* ag = va + g * m * k;
                    S* gbg = gb + g * n * k;
                    for (i64 i = 0; i < m; ++i)
                        for (i64 j = 0; j < n; ++j) {
                            const S s = ogg[i * n + j];
                            const S* arow = ag + i * k;
                            S* grow = gbg + j * k;
                            for (i64 l = 0; l < k; ++l) grow[l] += s * arow[l];
                        }
                }
                sb->grad_seen = true;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------- softmax family

/// Causal-masked row softmax for attention scores laid out [G*T, T]:
/// row r belongs to query position t = r mod T and may attend to columns
/// 0..t only; masked columns are exactly zero. Max-subtraction for stability.
template <typename S>
Tensor<S> causal_softmax_rows(Tape<S>& tp, const Tensor<S>& x, i64 seq) {
    if (x.shape().size() != 2 || x.dim(1) != seq || x.dim(0) % seq != 0)
        throw ShapeError("causal_softmax_rows: bad input " + shape_str(x.shape()) + " for seq " +
                         std::to_string(seq));
    const i64 rows = x.dim(0);
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    const S* px = x.data().data();
    S* po = out.data().data();
    for (i64 r = 0; r < rows; ++r) {
        const i64 t = r % seq;
        const S* xr = px + r * seq;
        S* orow = po + r * seq;
        S mx = xr[0];
        for (i64 j = 1; j <= t; ++j) mx = std::max(mx, xr[j]);
        S z = S(0);
        for (i64 j = 0; j <= t; ++j) {
            orow[j] = std::exp(xr[j] - mx);
            z += orow[j];
        }
        for (i64 j = 0; j <= t; ++j) orow[j] /= z;
    }
    if (detail::will_record(tp, {x.requires_grad()})) {
        out.set_requires_grad(true);
        auto sx = x.storage(), so = out.storage();
        tp.record(so, [sx, so, rows, seq] {
            if (!so->grad_seen || !sx->requires_grad) return;
            S* g = sx->grad.data();
            const S* og = so->grad.data();
            const S* p = so->value.data();
            for (i64 r = 0; r < rows; ++r) {
                const i64 t = r % seq;
                const S* prow = p + r * seq;
                const S* orow = og + r * seq;
                S dot = S(0);
                for (i64 j = 0; j <= t; ++j) dot += orow[j] * prow[j];
                S* grow = g + r * seq;
                for (i64 j = 0; j <= t; ++j) grow[j] += prow[j] * (orow[j] - dot);
            }
            sx->grad_seen = true;
        });
    }
    return out;
}

/// Log-softmax over the last dimension, max-subtracted. exp of each row sums
/// to 1. Throws NumericError on non-finite inputs.
template <typename S>
Tensor<S> log_softmax(Tape<S>& tp, const Tensor<S>& x) {
    auto [rows, cols] = detail::as_2d(x, "log_softmax");
    if (cols == 0) throw ShapeError("log_softmax over zero columns");
    const S* px = x.data().data();
    for (std::size_t i = 0; i < x.numel(); ++i)
        if (!std::isfinite(static_cast<double>(px[i])))
            throw NumericError("log_softmax: non-finite input");
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    S* po = out.data().data();
    for (i64 r = 0; r < rows; ++r) {
        const S* xr = px + r * cols;
        S* orow = po + r * cols;
        S mx = xr[0];
        for (i64 j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
        S z = S(0);
        for (i64 j = 0; j < cols; ++j) z += std::exp(xr[j] - mx);
        const S lz = std::log(z) + mx;
        for (i64 j = 0; j < cols; ++j) orow[j] = xr[j] - lz;
    }
    if (detail::will_record(tp, {x.requires_grad()})) {
        out.set_requires_grad(true);
        auto sx = x.storage(), so = out.storage();
        tp.record(so, [sx, so, rows, cols] {
            if (!so->grad_seen || !sx->requires_grad) return;
            S* g = sx->grad.data();
            const S* og = so->grad.data();
            const S* y = so->value.data();
            for (i64 r = 0; r < rows; ++r) {
                const S* orow = og + r * cols;
                const S* yrow = y + r * cols;
                S tot = S(0);
                for (i64 j = 0; j < cols; ++j) tot += orow[j];
                S* grow = g + r * cols;
                for (i64 j = 0; j < cols; ++j) grow[j] += orow[j] - std::exp(yrow[j]) * tot;
            }
            sx->grad_seen = true;
        });
    }
    return out;
}

/// Log-probabilities of a single logit vector.
template <typename S>
Tensor<S> softmax_logprobs(Tape<S>& tp, const Tensor<S>& logits) {
    if (logits.shape().size() != 1)
        throw ShapeError("softmax_logprobs: expected 1-d logits, got " +
                         shape_str(logits.shape()));
    return log_softmax(tp, logits);
}

}  // namespace scalpel
