#pragma once

// Dense row-major tensors with reverse-mode autodiff over an eagerly
// recorded tape. Broadcasting follows the numpy rule restricted to
// right-aligned shapes: extents are compared from the trailing dimension,
// and an extent of 1 stretches.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <utility>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mfmasc/errors.hpp"

namespace mfmasc {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

template <typename T>
class Tape;

template <typename T>
struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<T>> data;
    Tape<T>* tape = nullptr;  // non-null while recorded on a live tape
    int node = -1;

    Tensor() : data(std::make_shared<std::vector<T>>()) {}

    explicit Tensor(Shape s) : shape(std::move(s)) {
        for (size_t d : shape)
            if (d == 0) throw ContractViolation("tensor extent 0 in shape " + shape_str(shape));
        data = std::make_shared<std::vector<T>>(shape_numel(shape), T(0));
    }

    Tensor(Shape s, std::vector<T> values) : shape(std::move(s)) {
        for (size_t d : shape)
            if (d == 0) throw ContractViolation("tensor extent 0 in shape " + shape_str(shape));
        if (values.size() != shape_numel(shape))
            throw ContractViolation("data length " + std::to_string(values.size()) +
                                    " does not match shape " + shape_str(shape));
        data = std::make_shared<std::vector<T>>(std::move(values));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

    static Tensor full(Shape s, T v) {
        Tensor t(std::move(s));
        std::fill(t.data->begin(), t.data->end(), v);
        return t;
    }

    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    template <typename Rng>
    static Tensor randn(Shape s, Rng& rng, T stddev = T(1)) {
        Tensor t(std::move(s));
        std::normal_distribution<double> d(0.0, 1.0);
        for (auto& v : *t.data) v = static_cast<T>(d(rng)) * stddev;
        return t;
    }

    template <typename Rng>
    static Tensor uniform(Shape s, Rng& rng, T lo, T hi) {
        Tensor t(std::move(s));
        std::uniform_real_distribution<double> d(static_cast<double>(lo), static_cast<double>(hi));
        for (auto& v : *t.data) v = static_cast<T>(d(rng));
        return t;
    }

    size_t numel() const { return data->size(); }
    size_t rank() const { return shape.size(); }

    T* ptr() { return data->data(); }
    const T* ptr() const { return data->data(); }
    T& operator[](size_t i) { return (*data)[i]; }
    const T& operator[](size_t i) const { return (*data)[i]; }

    bool tracked() const { return tape != nullptr && node >= 0; }

    // Deep copy; result is untracked.
    Tensor clone() const {
        Tensor t;
        t.shape = shape;
        t.data = std::make_shared<std::vector<T>>(*data);
        return t;
    }

    // Untracked view of the same storage (drops tape association).
    Tensor detach() const {
        Tensor t;
        t.shape = shape;
        t.data = data;
        return t;
    }

    T item() const {
        if (numel() != 1)
            throw ContractViolation("item() on non-scalar tensor of shape " + shape_str(shape));
        return (*data)[0];
    }

    bool all_finite() const {
        for (T v : *data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

// ---------------------------------------------------------------------------
// Tape

template <typename T>
class Tape {
  public:
    using BackwardFn = std::function<void(Tape&, const std::vector<T>&)>;

    // Register a leaf; its gradient is retained after backward().
    int track(Tensor<T>& t) {
        t.tape = this;
        t.node = add_node({}, nullptr, t.shape, true);
        return t.node;
    }

    int record(Tensor<T>& out, std::vector<int> inputs, BackwardFn bw) {
        out.tape = this;
        out.node = add_node(std::move(inputs), std::move(bw), out.shape, false);
        return out.node;
    }

    void backward(const Tensor<T>& loss) {
        if (loss.tape != this || loss.node < 0)
            throw ContractViolation("backward: loss was not produced on this tape");
        if (loss.numel() != 1)
            throw ContractViolation("backward: loss must be scalar, got shape " +
                                    shape_str(loss.shape));
        grads_.assign(nodes_.size(), {});
        grads_[static_cast<size_t>(loss.node)] = {T(1)};
        for (int id = loss.node; id >= 0; --id) {
            auto& g = grads_[static_cast<size_t>(id)];
            if (g.empty()) continue;
            const Node& n = nodes_[static_cast<size_t>(id)];
            if (n.backward) {
                n.backward(*this, g);
                g.clear();
                g.shrink_to_fit();
            }
        }
    }

    void accumulate(int id, const T* g, size_t n) {
        if (id < 0) return;
        auto& buf = grads_[static_cast<size_t>(id)];
        if (buf.empty()) buf.assign(n, T(0));
        for (size_t i = 0; i < n; ++i) buf[i] += g[i];
    }

    std::vector<T>& grad_buf(int id) {
        auto& buf = grads_[static_cast<size_t>(id)];
        if (buf.empty()) buf.assign(shape_numel(nodes_[static_cast<size_t>(id)].shape), T(0));
        return buf;
    }

    bool has_grad(const Tensor<T>& t) const {
        return t.tape == this && t.node >= 0 &&
               static_cast<size_t>(t.node) < grads_.size() &&
               !grads_[static_cast<size_t>(t.node)].empty();
    }

    Tensor<T> grad(const Tensor<T>& t) const {
        if (t.tape != this || t.node < 0)
            throw ContractViolation("grad: tensor is not tracked on this tape");
        const auto& buf = grads_[static_cast<size_t>(t.node)];
        if (buf.empty()) return Tensor<T>::zeros(t.shape);
        return Tensor<T>(t.shape, buf);
    }

    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        std::vector<int> inputs;
        BackwardFn backward;  // null for leaves
        Shape shape;
        bool leaf;
    };

    int add_node(std::vector<int> inputs, BackwardFn bw, Shape shape, bool leaf) {
        nodes_.push_back(Node{std::move(inputs), std::move(bw), std::move(shape), leaf});
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::vector<Node> nodes_;
    std::vector<std::vector<T>> grads_;
};

// Tape the result of an op should be recorded on; inputs recorded on two
// different live tapes are a usage error.
template <typename T>
inline Tape<T>* result_tape(const Tensor<T>& a, const Tensor<T>* b = nullptr) {
    Tape<T>* t = a.tracked() ? a.tape : nullptr;
    if (b && b->tracked()) {
        if (t && t != b->tape)
            throw ContractViolation("operands recorded on different tapes");
        t = b->tape;
    }
    return t;
}

// ---------------------------------------------------------------------------
// Broadcasting helpers

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (size_t i = 0; i < r; ++i) {
        const size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ContractViolation("shapes not broadcastable: " + shape_str(a) + " vs " +
                                    shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `s` inside broadcast space `out` (0 where stretched).
inline std::vector<size_t> broadcast_strides(const Shape& s, const Shape& out) {
    std::vector<size_t> st(out.size(), 0);
    size_t stride = 1;
    for (size_t i = 0; i < s.size(); ++i) {
        const size_t ai = s.size() - 1 - i;
        const size_t oi = out.size() - 1 - i;
        st[oi] = (s[ai] == 1 && out[oi] != 1) ? 0 : stride;
        stride *= s[ai];
    }
    return st;
}

// Visit every flat index of `out`, yielding the matching flat offsets into
// two broadcast operands. Odometer iteration, no per-element division.
template <typename F>
inline void for_broadcast(const Shape& out, const std::vector<size_t>& sa,
                          const std::vector<size_t>& sb, F&& f) {
    const size_t n = shape_numel(out);
    const size_t r = out.size();
    std::vector<size_t> idx(r, 0);
    size_t oa = 0, ob = 0;
    for (size_t i = 0; i < n; ++i) {
        f(i, oa, ob);
        for (size_t d = r; d-- > 0;) {
            ++idx[d];
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < out[d]) break;
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

// Sum-reduce `g` (laid out as `gshape`) onto `target` shape; used by the
// backward pass of broadcast binary ops.
template <typename T>
inline std::vector<T> reduce_to_shape(const std::vector<T>& g, const Shape& gshape,
                                      const Shape& target) {
    std::vector<T> out(shape_numel(target), T(0));
    const auto st = broadcast_strides(target, gshape);
    const std::vector<size_t> zero(gshape.size(), 0);
    for_broadcast(gshape, st, zero, [&](size_t gi, size_t ti, size_t) { out[ti] += g[gi]; });
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise binary ops

namespace detail {

template <typename T, typename FwdF, typename BwdF>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, FwdF fwd,
                    BwdF bwd_pair) {
    Shape os;
    try {
        os = broadcast_shape(a.shape, b.shape);
    } catch (const ContractViolation&) {
        throw ContractViolation(std::string(name) + ": shapes not broadcastable: " +
                                shape_str(a.shape) + " vs " + shape_str(b.shape));
    }
    Tensor<T> out(os);
    const auto sa = broadcast_strides(a.shape, os);
    const auto sb = broadcast_strides(b.shape, os);
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    for_broadcast(os, sa, sb, [&](size_t i, size_t ia, size_t ib) { po[i] = fwd(pa[ia], pb[ib]); });

    if (Tape<T>* tp = result_tape(a, &b)) {
        const int na = a.tracked() ? a.node : -1;
        const int nb = b.tracked() ? b.node : -1;
        Tensor<T> ad = a.detach(), bd = b.detach();
        tp->record(out, {na, nb},
                   [=, os = out.shape](Tape<T>& t, const std::vector<T>& g) {
                       const auto ssa = broadcast_strides(ad.shape, os);
                       const auto ssb = broadcast_strides(bd.shape, os);
                       std::vector<T> ga, gb;
                       if (na >= 0) ga.assign(g.size(), T(0));
                       if (nb >= 0) gb.assign(g.size(), T(0));
                       const T* qa = ad.ptr();
                       const T* qb = bd.ptr();
                       for_broadcast(os, ssa, ssb, [&](size_t i, size_t ia, size_t ib) {
                           auto [da, db] = bwd_pair(qa[ia], qb[ib]);
                           if (na >= 0) ga[i] = g[i] * da;
                           if (nb >= 0) gb[i] = g[i] * db;
                       });
                       if (na >= 0) {
                           auto r = reduce_to_shape(ga, os, ad.shape);
                           t.accumulate(na, r.data(), r.size());
                       }
                       if (nb >= 0) {
                           auto r = reduce_to_shape(gb, os, bd.shape);
                           t.accumulate(nb, r.data(), r.size());
                       }
                   });
    }
    return out;
}

template <typename T, typename FwdF, typename DerivF>
Tensor<T> unary_op(const Tensor<T>& a, FwdF fwd, DerivF deriv) {
    Tensor<T> out(a.shape);
    const T* pa = a.ptr();
    T* po = out.ptr();
    const size_t n = a.numel();
    for (size_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);

    if (Tape<T>* tp = result_tape(a)) {
        Tensor<T> ad = a.detach(), od = out.detach();
        const int na = a.node;
        tp->record(out, {na}, [=](Tape<T>& t, const std::vector<T>& g) {
            std::vector<T> ga(g.size());
            const T* qa = ad.ptr();
            const T* qo = od.ptr();
            for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * deriv(qa[i], qo[i]);
            t.accumulate(na, ga.data(), ga.size());
        });
    }
    return out;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        "add", a, b, [](T x, T y) { return x + y; },
        [](T, T) { return std::pair<T, T>(T(1), T(1)); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        "sub", a, b, [](T x, T y) { return x - y; },
        [](T, T) { return std::pair<T, T>(T(1), T(-1)); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        "mul", a, b, [](T x, T y) { return x * y; },
        [](T x, T y) { return std::pair<T, T>(y, x); });
}

// Elementwise maximum; ties route the gradient to the first argument.
template <typename T>
Tensor<T> emax(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        "max", a, b, [](T x, T y) { return x >= y ? x : y; },
        [](T x, T y) {
            return x >= y ? std::pair<T, T>(T(1), T(0)) : std::pair<T, T>(T(0), T(1));
        });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return detail::unary_op(
        a, [](T x) { return x > T(0) ? x : T(0); },
        [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
    return detail::unary_op(
        a, [slope](T x) { return x > T(0) ? x : slope * x; },
        [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return detail::unary_op(
        a,
        [](T x) {
            // Branch avoids overflow of exp for large |x|.
            if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
            const T e = std::exp(x);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tlog(const Tensor<T>& a) {
    for (T v : *a.data)
        if (!(v > T(0)))
            throw ContractViolation("log: non-positive input " + std::to_string(v));
    return detail::unary_op(
        a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> texp(const Tensor<T>& a) {
    return detail::unary_op(
        a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

// ---------------------------------------------------------------------------
// Matmul (rank-2); dA = dC.B^T, dB = A^T.dC. Eigen provides the kernel.

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C(m,n) += or = A(m,k) * B(k,n), optionally transposing A or B in place.
template <typename T>
void gemm(const T* a, size_t ar, size_t ac, bool ta, const T* b, size_t br, size_t bc, bool tb,
          T* c) {
    Eigen::Map<const EMat<T>> A(a, static_cast<Eigen::Index>(ar), static_cast<Eigen::Index>(ac));
    Eigen::Map<const EMat<T>> B(b, static_cast<Eigen::Index>(br), static_cast<Eigen::Index>(bc));
    const size_t m = ta ? ac : ar;
    const size_t n = tb ? br : bc;
    Eigen::Map<EMat<T>> C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    if (!ta && !tb)
        C.noalias() = A * B;
    else if (ta && !tb)
        C.noalias() = A.transpose() * B;
    else if (!ta && tb)
        C.noalias() = A * B.transpose();
    else
        C.noalias() = A.transpose() * B.transpose();
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ContractViolation("matmul: rank-2 operands required, got " + shape_str(a.shape) +
                                " and " + shape_str(b.shape));
    if (a.shape[1] != b.shape[0])
        throw ContractViolation("matmul: inner extents differ: " + shape_str(a.shape) + " vs " +
                                shape_str(b.shape));
    const size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor<T> out({m, n});
    detail::gemm(a.ptr(), m, k, false, b.ptr(), k, n, false, out.ptr());

    if (Tape<T>* tp = result_tape(a, &b)) {
        const int na = a.tracked() ? a.node : -1;
        const int nb = b.tracked() ? b.node : -1;
        Tensor<T> ad = a.detach(), bd = b.detach();
        tp->record(out, {na, nb}, [=](Tape<T>& t, const std::vector<T>& g) {
            if (na >= 0) {
                std::vector<T> ga(m * k);
                detail::gemm(g.data(), m, n, false, bd.ptr(), k, n, true, ga.data());
                t.accumulate(na, ga.data(), ga.size());
            }
            if (nb >= 0) {
                std::vector<T> gb(k * n);
                detail::gemm(ad.ptr(), m, k, true, g.data(), m, n, false, gb.data());
                t.accumulate(nb, gb.data(), gb.size());
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions

enum class ReduceKind { Sum, Mean, Max };

template <typename T>
Tensor<T> reduce(ReduceKind kind, const Tensor<T>& x, const std::set<size_t>& axes,
                 bool keepdims) {
    for (size_t ax : axes)
        if (ax >= x.rank())
            throw ContractViolation("reduce: axis " + std::to_string(ax) +
                                    " out of range for rank " + std::to_string(x.rank()));
    Shape oshape;
    Shape kshape(x.rank());  // keepdims layout used internally
    for (size_t d = 0; d < x.rank(); ++d) {
        if (axes.count(d)) {
            kshape[d] = 1;
        } else {
            kshape[d] = x.shape[d];
            oshape.push_back(x.shape[d]);
        }
    }
    if (oshape.empty()) oshape.push_back(1);
    const Shape out_shape = keepdims ? kshape : oshape;

    const size_t on = shape_numel(kshape);
    size_t count = x.numel() / on;

    std::vector<T> acc;
    std::vector<size_t> argmax;
    if (kind == ReduceKind::Max) {
        acc.assign(on, -std::numeric_limits<T>::infinity());
        argmax.assign(on, 0);
    } else {
        acc.assign(on, T(0));
    }
    const auto st = broadcast_strides(kshape, x.shape);
    const std::vector<size_t> zero(x.rank(), 0);
    const T* px = x.ptr();
    for_broadcast(x.shape, st, zero, [&](size_t xi, size_t oi, size_t) {
        if (kind == ReduceKind::Max) {
            if (px[xi] > acc[oi]) {
                acc[oi] = px[xi];
                argmax[oi] = xi;
            }
        } else {
            acc[oi] += px[xi];
        }
    });
    if (kind == ReduceKind::Mean)
        for (auto& v : acc) v /= static_cast<T>(count);

    Tensor<T> out(out_shape, std::move(acc));

    if (Tape<T>* tp = result_tape(x)) {
        const int nx = x.node;
        const Shape xshape = x.shape;
        tp->record(out, {nx}, [=, am = std::move(argmax)](Tape<T>& t, const std::vector<T>& g) {
            std::vector<T> gx(shape_numel(xshape), T(0));
            if (kind == ReduceKind::Max) {
                for (size_t oi = 0; oi < g.size(); ++oi) gx[am[oi]] += g[oi];
            } else {
                const T scale = kind == ReduceKind::Mean ? T(1) / static_cast<T>(count) : T(1);
                const auto bst = broadcast_strides(kshape, xshape);
                const std::vector<size_t> z(xshape.size(), 0);
                for_broadcast(xshape, bst, z,
                              [&](size_t xi, size_t oi, size_t) { gx[xi] += g[oi] * scale; });
            }
            t.accumulate(nx, gx.data(), gx.size());
        });
    }
    return out;
}

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x, const std::set<size_t>& axes, bool keepdims = false) {
    return reduce(ReduceKind::Sum, x, axes, keepdims);
}
template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, const std::set<size_t>& axes, bool keepdims = false) {
    return reduce(ReduceKind::Mean, x, axes, keepdims);
}
template <typename T>
Tensor<T> reduce_max(const Tensor<T>& x, const std::set<size_t>& axes, bool keepdims = false) {
    return reduce(ReduceKind::Max, x, axes, keepdims);
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    std::set<size_t> axes;
    for (size_t d = 0; d < x.rank(); ++d) axes.insert(d);
    return reduce_sum(x, axes, false);
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape newshape) {
    if (shape_numel(newshape) != x.numel())
        throw ContractViolation("reshape: " + shape_str(x.shape) + " to " + shape_str(newshape) +
                                " changes element count");
    Tensor<T> out(newshape, *x.data);
    if (Tape<T>* tp = result_tape(x)) {
        const int nx = x.node;
        tp->record(out, {nx}, [=](Tape<T>& t, const std::vector<T>& g) {
            t.accumulate(nx, g.data(), g.size());
        });
    }
    return out;
}

// Concatenate along `axis`; extents must agree elsewhere.
template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, size_t axis) {
    if (a.rank() != b.rank() || axis >= a.rank())
        throw ContractViolation("concat: rank mismatch or bad axis");
    for (size_t d = 0; d < a.rank(); ++d)
        if (d != axis && a.shape[d] != b.shape[d])
            throw ContractViolation("concat: shapes " + shape_str(a.shape) + " and " +
                                    shape_str(b.shape) + " differ off axis " +
                                    std::to_string(axis));
    Shape os = a.shape;
    os[axis] += b.shape[axis];

    size_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= a.shape[d];
    for (size_t d = axis + 1; d < a.rank(); ++d) inner *= a.shape[d];
    const size_t wa = a.shape[axis] * inner, wb = b.shape[axis] * inner;

    Tensor<T> out(os);
    for (size_t o = 0; o < outer; ++o) {
        std::copy_n(a.ptr() + o * wa, wa, out.ptr() + o * (wa + wb));
        std::copy_n(b.ptr() + o * wb, wb, out.ptr() + o * (wa + wb) + wa);
    }

    if (Tape<T>* tp = result_tape(a, &b)) {
        const int na = a.tracked() ? a.node : -1;
        const int nb = b.tracked() ? b.node : -1;
        tp->record(out, {na, nb}, [=](Tape<T>& t, const std::vector<T>& g) {
            if (na >= 0) {
                std::vector<T> ga(outer * wa);
                for (size_t o = 0; o < outer; ++o)
                    std::copy_n(g.data() + o * (wa + wb), wa, ga.data() + o * wa);
                t.accumulate(na, ga.data(), ga.size());
            }
            if (nb >= 0) {
                std::vector<T> gb(outer * wb);
                for (size_t o = 0; o < outer; ++o)
                    std::copy_n(g.data() + o * (wa + wb) + wa, wb, gb.data() + o * wb);
                t.accumulate(nb, gb.data(), gb.size());
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gradient checking

// Max over elements of |analytic - central difference| / max(|a|,|n|,1e-8).
// Per-element step is eps * max(1, |x_i|).
template <typename T>
T finite_diff_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x,
                    T eps) {
    Tensor<T> xt = x.clone();
    Tape<T> tape;
    tape.track(xt);
    Tensor<T> loss = f(xt);
    if (loss.numel() != 1)
        throw ContractViolation("finite_diff_check: f must return a scalar");
    if (!std::isfinite(static_cast<double>(loss.item())))
        throw ContractViolation("finite_diff_check: f(x) is not finite");
    tape.backward(loss);
    Tensor<T> analytic = tape.grad(xt);

    T max_err = T(0);
    for (size_t i = 0; i < x.numel(); ++i) {
        const T h = eps * std::max(T(1), std::abs(x[i]));
        Tensor<T> xp = x.clone();
        Tensor<T> xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        const T fp = f(xp).item();
        const T fm = f(xm).item();
        const T numeric = (fp - fm) / (2 * h);
        const T a = analytic[i];
        const T denom = std::max({std::abs(a), std::abs(numeric), T(1e-8)});
        max_err = std::max(max_err, std::abs(a - numeric) / denom);
    }
    return max_err;
}

// As above, but errors are scaled by the largest gradient magnitude instead
// of per element. In binary32 the central difference of an entry much smaller
// than the gradient's overall scale sits below the rounding noise of f
// itself, so the per-element quotient measures noise, not correctness.
template <typename T>
T finite_diff_check_scaled(const std::function<Tensor<T>(const Tensor<T>&)>& f,
                           const Tensor<T>& x, T eps) {
    Tensor<T> xt = x.clone();
    Tape<T> tape;
    tape.track(xt);
    Tensor<T> loss = f(xt);
    if (loss.numel() != 1)
        throw ContractViolation("finite_diff_check: f must return a scalar");
    tape.backward(loss);
    Tensor<T> analytic = tape.grad(xt);

    std::vector<T> numeric(x.numel());
    T scale = T(1e-8);
    for (size_t i = 0; i < x.numel(); ++i) {
        const T h = eps * std::max(T(1), std::abs(x[i]));
        Tensor<T> xp = x.clone();
        Tensor<T> xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        numeric[i] = (f(xp).item() - f(xm).item()) / (2 * h);
        scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
    }
    T max_err = T(0);
    for (size_t i = 0; i < x.numel(); ++i)
        max_err = std::max(max_err, std::abs(analytic[i] - numeric[i]) / scale);
    return max_err;
}

}  // namespace mfmasc
