#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "tactus/errors.hpp"
#include "tactus/rng.hpp"
#include "tactus/tensor.hpp"

namespace tactus {

template <typename Real>
class GradTape;

// A tensor plus an optional position on a tape. tape == nullptr means a
// constant: it flows through the same forward code with no recording, which
// is how inference reuses the training graph at zero overhead.
template <typename Real>
struct Var {
    Tensor<Real> value;
    GradTape<Real>* tape = nullptr;
    int node = -1;

    Var() = default;
    Var(Tensor<Real> v) : value(std::move(v)) {}
    Var(Tensor<Real> v, GradTape<Real>* t, int n) : value(std::move(v)), tape(t), node(n) {}

    bool tracked() const { return tape != nullptr; }
};

// Records primitives in creation order. Inputs always precede outputs, so a
// reverse walk over the record is a reverse topological order that visits
// each node exactly once.
template <typename Real>
class GradTape {
  public:
    using BackwardFn = std::function<void(GradTape&, const std::vector<Real>&)>;

    struct Node {
        const char* op;
        int64_t numel;
        std::vector<Real> grad;  // allocated lazily; empty means untouched
        BackwardFn backward;     // null for leaves
    };

    int emit(const char* op, int64_t numel, BackwardFn backward) {
        nodes_.push_back(Node{op, numel, {}, std::move(backward)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    Var<Real> leaf(Tensor<Real> v) {
        int id = emit("leaf", v.numel(), nullptr);
        return Var<Real>(std::move(v), this, id);
    }

    std::vector<Real>& grad_of(int node) {
        Node& n = nodes_[static_cast<size_t>(node)];
        if (n.grad.empty()) n.grad.assign(static_cast<size_t>(n.numel), Real(0));
        return n.grad;
    }

    // Seeds d(loss)/d(loss) = 1 and propagates. Nodes recorded after the loss
    // or not on a path to it are skipped (their grad stays unallocated).
    void backward_from(const Var<Real>& loss) {
        if (!loss.tracked() || loss.tape != this)
            throw ConfigError("backward_from: loss is not recorded on this tape");
        if (loss.value.numel() != 1)
            throw ShapeError("backward_from: loss must be a scalar, got shape " + shape_str(loss.value.shape));
        grad_of(loss.node)[0] += Real(1);
        for (int i = loss.node; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.grad.empty() || !n.backward) continue;
            n.backward(*this, n.grad);
        }
    }

    Tensor<Real> grad_tensor(const Var<Real>& v) {
        if (!v.tracked() || v.tape != this)
            throw ConfigError("grad_tensor: variable is not recorded on this tape");
        Node& n = nodes_[static_cast<size_t>(v.node)];
        auto d = n.grad.empty() ? std::make_shared<std::vector<Real>>(static_cast<size_t>(n.numel), Real(0))
                                : std::make_shared<std::vector<Real>>(n.grad);
        return Tensor<Real>(v.value.shape, std::move(d));
    }

    void clear() { nodes_.clear(); }
    size_t size() const { return nodes_.size(); }

  private:
    std::vector<Node> nodes_;
};

namespace detail {

template <typename Real>
GradTape<Real>* joint_tape(const char* op, const Var<Real>& a, const Var<Real>& b) {
    if (a.tape && b.tape && a.tape != b.tape)
        throw ConfigError(std::string(op) + ": inputs recorded on different tapes");
    return a.tape ? a.tape : b.tape;
}

// Strides of `in` aligned to the axes of `out`; 0 where `in` broadcasts.
inline std::vector<int64_t> bcast_strides(const std::vector<int>& in, const std::vector<int>& out) {
    size_t ri = in.size(), ro = out.size();
    std::vector<int64_t> st(ro, 0);
    int64_t s = 1;
    for (size_t i = 0; i < ri; ++i) {
        size_t ii = ri - 1 - i, oi = ro - 1 - i;
        st[oi] = (in[ii] == 1) ? 0 : s;
        s *= in[ii];
    }
    return st;
}

// fn(out_flat, a_flat, b_flat) over every element of `out`, with a and b
// offsets maintained incrementally from their (possibly zero) strides.
template <typename F>
inline void for_each_bcast(const std::vector<int>& out, const std::vector<int64_t>& sa,
                           const std::vector<int64_t>& sb, F&& fn) {
    int64_t n = shape_numel(out);
    size_t r = out.size();
    if (r == 0) {
        fn(int64_t(0), int64_t(0), int64_t(0));
        return;
    }
    std::vector<int> coord(r, 0);
    int64_t ia = 0, ib = 0;
    for (int64_t i = 0; i < n; ++i) {
        fn(i, ia, ib);
        for (int ax = static_cast<int>(r) - 1; ax >= 0; --ax) {
            size_t u = static_cast<size_t>(ax);
            ++coord[u];
            ia += sa[u];
            ib += sb[u];
            if (coord[u] < out[u]) break;
            ia -= static_cast<int64_t>(coord[u]) * sa[u];
            ib -= static_cast<int64_t>(coord[u]) * sb[u];
            coord[u] = 0;
        }
    }
}

// C[m,n] += A[m,k] B[k,n]
template <typename Real>
inline void mm_nn(const Real* a, const Real* b, Real* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        Real* crow = c + static_cast<int64_t>(i) * n;
        const Real* arow = a + static_cast<int64_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            Real av = arow[p];
            const Real* brow = b + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[m,k] B[n,k]^T
template <typename Real>
inline void mm_nt(const Real* a, const Real* b, Real* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const Real* arow = a + static_cast<int64_t>(i) * k;
        Real* crow = c + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const Real* brow = b + static_cast<int64_t>(j) * k;
            Real s = 0;
            for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] += s;
        }
    }
}

// C[m,n] += A[k,m]^T B[k,n]
template <typename Real>
inline void mm_tn(const Real* a, const Real* b, Real* c, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        const Real* arow = a + static_cast<int64_t>(p) * m;
        const Real* brow = b + static_cast<int64_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            Real av = arow[i];
            if (av == Real(0)) continue;
            Real* crow = c + static_cast<int64_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename Real>
inline Var<Real> make_result(const char* op, GradTape<Real>* tape, Tensor<Real> out,
                             typename GradTape<Real>::BackwardFn backward) {
    check_finite(op, out);
    if (!tape) return Var<Real>(std::move(out));
    int id = tape->emit(op, out.numel(), std::move(backward));
    return Var<Real>(std::move(out), tape, id);
}

}  // namespace detail

// ---- elementwise binary ops with right-aligned broadcasting ----

template <typename Real, typename Fwd, typename Bwd>
Var<Real> binary_bcast_op(const char* op, const Var<Real>& a, const Var<Real>& b, Fwd fwd, Bwd bwd) {
    auto out_shape = broadcast_shapes(op, a.value.shape, b.value.shape);
    auto sa = detail::bcast_strides(a.value.shape, out_shape);
    auto sb = detail::bcast_strides(b.value.shape, out_shape);
    auto out = std::make_shared<std::vector<Real>>(static_cast<size_t>(shape_numel(out_shape)));
    {
        const Real* pa = a.value.ptr();
        const Real* pb = b.value.ptr();
        Real* po = out->data();
        detail::for_each_bcast(out_shape, sa, sb,
                               [&](int64_t i, int64_t ia, int64_t ib) { po[i] = fwd(pa[ia], pb[ib]); });
    }
    GradTape<Real>* tape = detail::joint_tape(op, a, b);
    typename GradTape<Real>::BackwardFn backward;
    if (tape) {
        int na = a.tape ? a.node : -1;
        int nb = b.tape ? b.node : -1;
        auto da = a.value.data, db = b.value.data;
        backward = [=](GradTape<Real>& tp, const std::vector<Real>& g) {
            std::vector<Real>* ga = na >= 0 ? &tp.grad_of(na) : nullptr;
            std::vector<Real>* gb = nb >= 0 ? &tp.grad_of(nb) : nullptr;
            const Real* pa = da->data();
            const Real* pb = db->data();
            detail::for_each_bcast(out_shape, sa, sb, [&](int64_t i, int64_t ia, int64_t ib) {
                if (ga) (*ga)[static_cast<size_t>(ia)] += bwd(g[static_cast<size_t>(i)], pa[ia], pb[ib], true);
                if (gb) (*gb)[static_cast<size_t>(ib)] += bwd(g[static_cast<size_t>(i)], pa[ia], pb[ib], false);
            });
        };
    }
    return detail::make_result(op, tape, Tensor<Real>(out_shape, std::move(out)), std::move(backward));
}

template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
    return binary_bcast_op<Real>(
        "add", a, b, [](Real x, Real y) { return x + y; },
        [](Real g, Real, Real, bool) { return g; });
}

template <typename Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b) {
    return binary_bcast_op<Real>(
        "sub", a, b, [](Real x, Real y) { return x - y; },
        [](Real g, Real, Real, bool to_a) { return to_a ? g : -g; });
}

template <typename Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b) {
    return binary_bcast_op<Real>(
        "mul", a, b, [](Real x, Real y) { return x * y; },
        [](Real g, Real x, Real y, bool to_a) { return to_a ? g * y : g * x; });
}

// ---- elementwise unary ops ----

template <typename Real, typename Fwd, typename Bwd>
Var<Real> unary_op(const char* op, const Var<Real>& a, Fwd fwd, Bwd bwd_from_in_out) {
    auto out = std::make_shared<std::vector<Real>>(a.value.data->size());
    const Real* pa = a.value.ptr();
    for (size_t i = 0; i < out->size(); ++i) (*out)[i] = fwd(pa[i]);
    typename GradTape<Real>::BackwardFn backward;
    if (a.tape) {
        int na = a.node;
        auto din = a.value.data;
        auto dout = out;
        backward = [=](GradTape<Real>& tp, const std::vector<Real>& g) {
            auto& ga = tp.grad_of(na);
            const Real* x = din->data();
            const Real* y = dout->data();
            for (size_t i = 0; i < g.size(); ++i) ga[i] += bwd_from_in_out(g[i], x[i], y[i]);
        };
    }
    return detail::make_result(op, a.tape, Tensor<Real>(a.value.shape, std::move(out)), std::move(backward));
}

template <typename Real>
Var<Real> exp(const Var<Real>& a) {
    return unary_op<Real>(
        "exp", a, [](Real x) { return std::exp(x); }, [](Real g, Real, Real y) { return g * y; });
}

template <typename Real>
Var<Real> log(const Var<Real>& a) {
    return unary_op<Real>(
        "log", a, [](Real x) { return std::log(x); }, [](Real g, Real x, Real) { return g / x; });
}

template <typename Real>
Var<Real> sqrt(const Var<Real>& a) {
    return unary_op<Real>(
        "sqrt", a, [](Real x) { return std::sqrt(x); }, [](Real g, Real, Real y) { return g / (Real(2) * y); });
}

template <typename Real>
Var<Real> tanh(const Var<Real>& a) {
    return unary_op<Real>(
        "tanh", a, [](Real x) { return std::tanh(x); },
        [](Real g, Real, Real y) { return g * (Real(1) - y * y); });
}

template <typename Real>
Var<Real> scale(const Var<Real>& a, Real c) {
    return unary_op<Real>(
        "scale", a, [c](Real x) { return c * x; }, [c](Real g, Real, Real) { return g * c; });
}

template <typename Real>
Var<Real> add_const(const Var<Real>& a, Real c) {
    return unary_op<Real>(
        "add_const", a, [c](Real x) { return x + c; }, [](Real g, Real, Real) { return g; });
}

template <typename Real>
Var<Real> square(const Var<Real>& a) {
    return unary_op<Real>(
        "square", a, [](Real x) { return x * x; }, [](Real g, Real x, Real) { return Real(2) * g * x; });
}

// ---- matmul / transpose / reshape ----

// a [m,k] times b [k,n), or b [n,k] when transpose_b.
template <typename Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b, bool transpose_b = false) {
    if (a.value.rank() != 2 || b.value.rank() != 2)
        throw ShapeError("matmul: expects rank-2 inputs, got " + shape_str(a.value.shape) + " and " +
                         shape_str(b.value.shape));
    int m = a.value.dim(0), k = a.value.dim(1);
    int bk = transpose_b ? b.value.dim(1) : b.value.dim(0);
    int n = transpose_b ? b.value.dim(0) : b.value.dim(1);
    if (k != bk)
        throw ShapeError(std::string("matmul: inner dimensions disagree, ") + shape_str(a.value.shape) +
                         (transpose_b ? " times transposed " : " times ") + shape_str(b.value.shape));
    auto out = std::make_shared<std::vector<Real>>(static_cast<size_t>(m) * n, Real(0));
    if (transpose_b)
        detail::mm_nt(a.value.ptr(), b.value.ptr(), out->data(), m, k, n);
    else
        detail::mm_nn(a.value.ptr(), b.value.ptr(), out->data(), m, k, n);
    GradTape<Real>* tape = detail::joint_tape("matmul", a, b);
    typename GradTape<Real>::BackwardFn backward;
    if (tape) {
        int na = a.tape ? a.node : -1;
        int nb = b.tape ? b.node : -1;
        auto da = a.value.data, db = b.value.data;
        backward = [=](GradTape<Real>& tp, const std::vector<Real>& g) {
            if (na >= 0) {
                auto& ga = tp.grad_of(na);
                if (transpose_b)
                    detail::mm_nn(g.data(), db->data(), ga.data(), m, n, k);
                else
                    detail::mm_nt(g.data(), db->data(), ga.data(), m, n, k);
            }
            if (nb >= 0) {
                auto& gb = tp.grad_of(nb);
                if (transpose_b)
                    detail::mm_tn(g.data(), da->data(), gb.data(), n, m, k);
                else
                    detail::mm_tn(da->data(), g.data(), gb.data(), k, m, n);
            }
        };
    }
    return detail::make_result("matmul", tape, Tensor<Real>({m, n}, std::move(out)), std::move(backward));
}

template <typename Real>
Var<Real> transpose(const Var<Real>& a) {
    if (a.value.rank() != 2)
        throw ShapeError("transpose: expects rank-2 input, got " + shape_str(a.value.shape));
    int m = a.value.dim(0), n = a.value.dim(1);
    auto out = std::make_shared<std::vector<Real>>(static_cast<size_t>(m) * n);
    const Real* pa = a.value.ptr();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            (*out)[static_cast<size_t>(j) * m + i] = pa[static_cast<size_t>(i) * n + j];
    typename GradTape<Real>::BackwardFn backward;
    if (a.tape) {
        int na = a.node;
        backward = [=](GradTape<Real>& tp, const std::vector<Real>& g) {
            auto& ga = tp.grad_of(na);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    ga[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(j) * m + i];
        };
    }
    return detail::make_result("transpose", a.tape, Tensor<Real>({n, m}, std::move(out)), std::move(backward));
}

template <typename Real>
Var<Real> reshape(const Var<Real>& a, std::vector<int> new_shape) {
    Tensor<Real>::validate_shape(new_shape);
    if (shape_numel(new_shape) != a.value.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.value.shape) + " as " + shape_str(new_shape));
    typename GradTape<Real>::BackwardFn backward;
    if (a.tape) {
        int na = a.node;
        backward = [na](GradTape<Real>& tp, const std::vector<Real>& g) {
            auto& ga = tp.grad_of(na);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        };
    }
    // shares the underlying buffer; tensors are immutable so this is safe
    return detail::make_result("reshape", a.tape, Tensor<Real>(std::move(new_shape), a.value.data),
                               std::move(backward));
}

// ---- slicing / concatenation along the last axis ----

template <typename Real>
Var<Real> slice_last(const Var<Real>& a, int start, int len) {
    int last = a.value.last_dim();
    if (a.value.rank() == 0 || len <= 0 || start < 0 || start + len > last)
        throw ShapeError("slice_last: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") invalid for shape " + shape_str(a.value.shape));
    int64_t rows = a.value.numel() / last;
    auto out_shape = a.value.shape;
    out_shape.back() = len;
    auto out = std::make_shared<std::vector<Real>>(static_cast<size_t>(rows) * len);
    const Real* pa = a.value.ptr();
    for (int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < len; ++j) (*out)[static_cast<size_t>(r * len + j)] = pa[r * last + start + j];
    typename GradTape<Real>::BackwardFn backward;
    if (a.tape) {
        int na = a.node;
        backward = [=](GradTape<Real>& tp, const std::vector<Real>& g) {
            auto& ga = tp.grad_of(na);
            for (int64_t r = 0; r < rows; ++r)
                for (int j = 0; j < len; ++j)
                    ga[static_cast<size_t>(r * last + start + j)] += g[static_cast<size_t>(r * len + j)];
        };
    }
    return detail::make_result("slice_last", a.tape, Tensor<Real>(std::move(out_shape), std::move(out)),
                               std::move(backward));
}

template <typename Real>
Var<Real> concat_last(const Var<Real>& a, const Var<Real>& b) {
    if (a.value.rank() == 0 || a.value.rank() != b.value.rank())
        throw ShapeError("concat_last: ranks disagree, " + shape_str(a.value.shape) + " and " +
                         shape_str(b.value.shape));
    for (int i = 0; i + 1 < a.value.rank(); ++i)
        if (a.value.dim(i) != b.value.dim(i))
            throw ShapeError("concat_last: leading dimensions disagree, " + shape_str(a.value.shape) + " and " +
                             shape_str(b.value.shape));
    int la = a.value.shape.back(), lb = b.value.shape.back();
    int64_t rows = a.value.numel() / la;
    auto out_shape = a.value.shape;
    out_shape.back() = la + lb;
    auto out = std::make_shared<std::vector<Real>>(static_cast<size_t>(rows) * (la + lb));
    const Real* pa = a.value.ptr();
    const Real* pb = b.value.ptr();
    for (int64_t r = 0; r < rows; ++r) {
        for (int j = 0; j < la; ++j) (*out)[static_cast<size_t>(r * (la + lb) + j)] = pa[r * la + j];
        for (int j = 0; j < lb; ++j) (*out)[static_cast<size_t>(r * (la + lb) + la + j)] = pb[r * lb + j];
    }
    GradTape<Real>* tape = detail::joint_tape("concat_last", a, b);
    typename GradTape<Real>::BackwardFn backward;
    if (tape) {
        int na = a.tape ? a.node : -1;
        int nb = b.tape ? b.node : -1;
        backward = [=](GradTape<Real>& tp, const std::vector<Real>& g) {
            if (na >= 0) {
                auto& ga = tp.grad_of(na);
                for (int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < la; ++j)
                        ga[static_cast<size_t>(r * la + j)] += g[static_cast<size_t>(r * (la + lb) + j)];
            }
            if (nb >= 0) {
                auto& gb = tp.grad_of(nb);
                for (int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < lb; ++j)
                        gb[static_cast<size_t>(r * lb + j)] += g[static_cast<size_t>(r * (la + lb) + la + j)];
            }
        };
    }
    return detail::make_result("concat_last", tape, Tensor<Real>(std::move(out_shape), std::move(out)),
                               std::move(backward));
}

// Gathers rows of a [V,d] table; backward scatter-adds into the table.
template <typename Real>
Var<Real> select_rows(const Var<Real>& table, const std::vector<int>& ids) {
    if (table.value.rank() != 2)
        throw ShapeError("select_rows: expects rank-2 table, got " + shape_str(table.value.shape));
    if (ids.empty()) throw ShapeError("select_rows: empty id list");
    int v = table.value.dim(0), d = table.value.dim(1);
    for (int id : ids)
        if (id < 0 || id >= v)
            throw ShapeError("select_rows: id " + std::to_string(id) + " outside table of " + std::to_string(v) +
                             " rows");
    int k = static_cast<int>(ids.size());
    auto out = std::make_shared<std::vector<Real>>(static_cast<size_t>(k) * d);
    const Real* pt = table.value.ptr();
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < d; ++j)
            (*out)[static_cast<size_t>(i) * d + j] = pt[static_cast<size_t>(ids[static_cast<size_t>(i)]) * d + j];
    typename GradTape<Real>::BackwardFn backward;
    if (table.tape) {
        int nt = table.node;
        auto ids_copy = ids;
        backward = [=](GradTape<Real>& tp, const std::vector<Real>& g) {
            auto& gt = tp.grad_of(nt);
            for (int i = 0; i < k; ++i)
                for (int j = 0; j < d; ++j)
                    gt[static_cast<size_t>(ids_copy[static_cast<size_t>(i)]) * d + j] +=
                        g[static_cast<size_t>(i) * d + j];
        };
    }
    return detail::make_result("select_rows", table.tape, Tensor<Real>({k, d}, std::move(out)), std::move(backward));
}

// ---- row-wise ops over the last axis ----

template <typename Real>
Var<Real> softmax_last_axis(const Var<Real>& a) {
    int c = a.value.last_dim();
    int64_t rows = a.value.numel() / c;
    auto out = std::make_shared<std::vector<Real>>(a.value.data->size());
    const Real* pa = a.value.ptr();
    for (int64_t r = 0; r < rows; ++r) {
        const Real* x = pa + r * c;
        Real* y = out->data() + r * c;
        Real m = x[0];
        for (int j = 1; j < c; ++j) m = std::max(m, x[j]);
        Real s = 0;
        for (int j = 0; j < c; ++j) {
            y[j] = std::exp(x[j] - m);
            s += y[j];
        }
        for (int j = 0; j < c; ++j) y[j] /= s;
    }
    typename GradTape<Real>::BackwardFn backward;
    if (a.tape) {
        int na = a.node;
        auto dout = out;
        backward = [=](GradTape<Real>& tp, const std::vector<Real>& g) {
            auto& ga = tp.grad_of(na);
            const Real* y = dout->data();
            for (int64_t r = 0; r < rows; ++r) {
                const Real* yr = y + r * c;
                const Real* gr = g.data() + r * c;
                Real dot = 0;
                for (int j = 0; j < c; ++j) dot += gr[j] * yr[j];
                Real* gar = ga.data() + r * c;
                for (int j = 0; j < c; ++j) gar[j] += yr[j] * (gr[j] - dot);
            }
        };
    }
    return detail::make_result("softmax_last_axis", a.tape, Tensor<Real>(a.value.shape, std::move(out)),
                               std::move(backward));
}

// Normalizes each last-axis slice to zero mean, unit variance. No affine.
template <typename Real>
Var<Real> layer_norm_last(const Var<Real>& a, Real eps = Real(1e-5)) {
    int c = a.value.last_dim();
    int64_t rows = a.value.numel() / c;
    auto out = std::make_shared<std::vector<Real>>(a.value.data->size());
    auto inv_std = std::make_shared<std::vector<Real>>(static_cast<size_t>(rows));
    const Real* pa = a.value.ptr();
    for (int64_t r = 0; r < rows; ++r) {
        const Real* x = pa + r * c;
        Real mu = 0;
        for (int j = 0; j < c; ++j) mu += x[j];
        mu /= c;
        Real var = 0;
        for (int j = 0; j < c; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= c;
        Real is = Real(1) / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = is;
        Real* y = out->data() + r * c;
        for (int j = 0; j < c; ++j) y[j] = (x[j] - mu) * is;
    }
    typename GradTape<Real>::BackwardFn backward;
    if (a.tape) {
        int na = a.node;
        auto dout = out;
        backward = [=](GradTape<Real>& tp, const std::vector<Real>& g) {
            auto& ga = tp.grad_of(na);
            for (int64_t r = 0; r < rows; ++r) {
                const Real* yr = dout->data() + r * c;
                const Real* gr = g.data() + r * c;
                Real gm = 0, gym = 0;
                for (int j = 0; j < c; ++j) {
                    gm += gr[j];
                    gym += gr[j] * yr[j];
                }
                gm /= c;
                gym /= c;
                Real is = (*inv_std)[static_cast<size_t>(r)];
                Real* gar = ga.data() + r * c;
                for (int j = 0; j < c; ++j) gar[j] += is * (gr[j] - gm - yr[j] * gym);
            }
        };
    }
    return detail::make_result("layer_norm_last", a.tape, Tensor<Real>(a.value.shape, std::move(out)),
                               std::move(backward));
}

// ---- reductions ----

template <typename Real>
Var<Real> sum_all(const Var<Real>& a) {
    Real s = 0;
    for (Real v : *a.value.data) s += v;
    typename GradTape<Real>::BackwardFn backward;
    if (a.tape) {
        int na = a.node;
        backward = [na](GradTape<Real>& tp, const std::vector<Real>& g) {
            auto& ga = tp.grad_of(na);
            for (auto& v : ga) v += g[0];
        };
    }
    return detail::make_result("sum_all", a.tape, Tensor<Real>::scalar(s), std::move(backward));
}

template <typename Real>
Var<Real> mean_all(const Var<Real>& a) {
    Real n = static_cast<Real>(a.value.numel());
    Real s = 0;
    for (Real v : *a.value.data) s += v;
    s /= n;
    typename GradTape<Real>::BackwardFn backward;
    if (a.tape) {
        int na = a.node;
        backward = [na, n](GradTape<Real>& tp, const std::vector<Real>& g) {
            auto& ga = tp.grad_of(na);
            for (auto& v : ga) v += g[0] / n;
        };
    }
    return detail::make_result("mean_all", a.tape, Tensor<Real>::scalar(s), std::move(backward));
}

// ---- whole-computation evaluation ----

template <typename Real>
using TensorMap = std::map<std::string, Tensor<Real>>;

template <typename Real>
using VarMap = std::map<std::string, Var<Real>>;

// A computation maps named parameter Vars to a scalar loss Var, recording on
// the given tape whenever the parameters are tracked.
template <typename Real>
using Computation = std::function<Var<Real>(GradTape<Real>&, const VarMap<Real>&)>;

template <typename Real>
struct EvalResult {
    Real value;
    TensorMap<Real> grads;
};

template <typename Real>
EvalResult<Real> evaluate_with_gradients(const Computation<Real>& f, const TensorMap<Real>& params) {
    GradTape<Real> tape;
    VarMap<Real> vars;
    for (const auto& [name, t] : params) vars.emplace(name, tape.leaf(t));
    Var<Real> out = f(tape, vars);
    if (out.value.numel() != 1)
        throw ShapeError("evaluate_with_gradients: computation must yield a scalar, got shape " +
                         shape_str(out.value.shape));
    EvalResult<Real> res;
    res.value = out.value.at(0);
    if (out.tracked()) tape.backward_from(out);
    for (auto& [name, v] : vars) res.grads.emplace(name, tape.grad_tensor(v));
    return res;
}

// Forward only: parameters flow through as constants, nothing is recorded.
template <typename Real>
Real evaluate_value(const Computation<Real>& f, const TensorMap<Real>& params) {
    GradTape<Real> tape;
    VarMap<Real> vars;
    for (const auto& [name, t] : params) vars.emplace(name, Var<Real>(t));
    Var<Real> out = f(tape, vars);
    if (out.value.numel() != 1)
        throw ShapeError("evaluate_value: computation must yield a scalar, got shape " +
                         shape_str(out.value.shape));
    return out.value.at(0);
}

// ---- finite-difference verification ----

template <typename Real>
struct GradCheckEntry {
    std::string param;
    int64_t index;
    Real analytic;
    Real numeric;
    Real rel_error;
};

template <typename Real>
struct GradCheckReport {
    Real max_rel_error = 0;
    bool pass = true;
    std::vector<GradCheckEntry<Real>> entries;
};

// Central differences around each checked parameter entry. With
// max_indices_per_param > 0 a random subset of entries per parameter is
// checked (rng required); otherwise every entry is.
template <typename Real>
GradCheckReport<Real> grad_check(const Computation<Real>& f, const TensorMap<Real>& params, Real step,
                                 Real tolerance, int max_indices_per_param = 0, Rng* rng = nullptr) {
    static_assert(std::is_same_v<Real, double>, "grad_check runs in 64-bit precision only");
    if (!(step >= Real(1e-6) && step <= Real(1e-3)))
        throw ConfigError("grad_check: step must lie in [1e-6, 1e-3]");
    if (max_indices_per_param > 0 && !rng)
        throw ConfigError("grad_check: index sampling requires an rng");
    EvalResult<Real> base = evaluate_with_gradients(f, params);
    GradCheckReport<Real> report;
    for (const auto& [name, t] : params) {
        std::vector<int64_t> idx;
        if (max_indices_per_param > 0 && t.numel() > max_indices_per_param) {
            for (int i = 0; i < max_indices_per_param; ++i)
                idx.push_back(static_cast<int64_t>(rng->uniform_int(static_cast<uint64_t>(t.numel()))));
        } else {
            idx.resize(static_cast<size_t>(t.numel()));
            for (int64_t i = 0; i < t.numel(); ++i) idx[static_cast<size_t>(i)] = i;
        }
        const Tensor<Real>& g = base.grads.at(name);
        for (int64_t i : idx) {
            TensorMap<Real> bumped = params;
            auto d = std::make_shared<std::vector<Real>>(*t.data);
            (*d)[static_cast<size_t>(i)] = t.at(i) + step;
            bumped.at(name) = Tensor<Real>(t.shape, d);
            Real up = evaluate_value(f, bumped);
            auto d2 = std::make_shared<std::vector<Real>>(*t.data);
            (*d2)[static_cast<size_t>(i)] = t.at(i) - step;
            bumped.at(name) = Tensor<Real>(t.shape, d2);
            Real down = evaluate_value(f, bumped);
            Real fd = (up - down) / (Real(2) * step);
            Real ad = g.at(i);
            Real rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), Real(1e-8)});
            report.entries.push_back({name, i, ad, fd, rel});
            report.max_rel_error = std::max(report.max_rel_error, rel);
        }
    }
    report.pass = report.max_rel_error <= tolerance;
    return report;
}

}  // namespace tactus
