#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <unordered_map>
#include <vector>

#include "adaptgot/error.hpp"
#include "adaptgot/matrix.hpp"

/// Minimal reverse-mode differentiation over dense 2-D arrays.
///
/// A Tape records every operation in append order; backward() walks it once in
/// reverse. Values are 64-bit, every op output is checked for NaN/Inf.
namespace adaptgot::ad {

using Tensor = Matrix;

/// A named trainable array. Parameters are owned by models; the tape only
/// references them, so they must outlive any tape they are used on.
struct Parameter {
    std::string name;
    Tensor value;
};

class Tape;

/// Handle to a node on a tape.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    double scalar() const { return value()[0]; }
    Tape* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

using Gradients = std::unordered_map<const Parameter*, Tensor>;

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf that never receives a gradient.
    Var constant(Tensor t) { return push_leaf(std::move(t), false, nullptr); }

    /// Leaf that receives a gradient (readable through grad() after backward).
    Var variable(Tensor t) { return push_leaf(std::move(t), true, nullptr); }

    /// Leaf bound to a parameter; its gradient is reported by backward().
    Var param(const Parameter& p) {
        const auto it = param_nodes_.find(&p);
        if (it != param_nodes_.end()) return Var(this, it->second);
        Var v = push_leaf(p.value, true, &p);
        param_nodes_.emplace(&p, v.id());
        return v;
    }

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Records an op node. `inputs` determine whether the node needs a gradient.
    Var push(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn, const char* op) {
        return push(std::move(value), std::vector<Var>(inputs), std::move(fn), op);
    }

    Var push(Tensor value, const std::vector<Var>& inputs, BackwardFn fn, const char* op) {
        if (consumed_) throw Error("tape already consumed by backward()");
        if (!value.all_finite()) throw NumericalError(std::string("non-finite result in op '") + op + "'");
        bool needs = false;
        for (const auto& in : inputs) {
            if (in.tape() != this) throw ValidationError(std::string("op '") + op + "': input from another tape");
            needs = needs || nodes_[in.id()].needs_grad;
        }
        nodes_.push_back({std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, nullptr, needs});
        return Var(this, nodes_.size() - 1);
    }

    /// Adds `g` into the gradient of node `id` (no-op for constants).
    void accumulate(std::size_t id, const Tensor& g) {
        auto& n = nodes_[id];
        if (!n.needs_grad) return;
        if (n.grad.empty()) {
            n.grad = g;
            return;
        }
        for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
    }

    /// Reverse sweep from a scalar loss. May be called once per tape.
    Gradients backward(Var loss) {
        if (consumed_) throw Error("backward() called twice on the same tape");
        if (loss.tape() != this) throw ValidationError("loss does not belong to this tape");
        if (loss.value().size() != 1) throw ValidationError("backward() requires a scalar loss, got " + loss.value().shape_str());
        consumed_ = true;
        accumulate(loss.id(), Tensor(1, 1, 1.0));
        for (std::size_t i = loss.id() + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (!n.needs_grad || n.grad.empty() || !n.backward) continue;
            // The closure may accumulate into earlier nodes only, so `n` stays valid.
            const Tensor g = n.grad;
            n.backward(*this, g);
        }
        Gradients out;
        for (const auto& [p, id] : param_nodes_) {
            const auto& n = nodes_[id];
            out.emplace(p, n.grad.empty() ? Tensor(n.value.rows(), n.value.cols()) : n.grad);
        }
        return out;
    }

    /// Gradient of a leaf/intermediate after backward(); zeros if it received none.
    Tensor grad(Var v) const {
        const auto& n = nodes_.at(v.id());
        return n.grad.empty() ? Tensor(n.value.rows(), n.value.cols()) : n.grad;
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        BackwardFn backward;
        const Parameter* param;
        bool needs_grad;
    };

    Var push_leaf(Tensor t, bool needs_grad, const Parameter* p) {
        if (consumed_) throw Error("tape already consumed by backward()");
        if (!t.all_finite()) throw NumericalError("non-finite leaf value");
        nodes_.push_back({std::move(t), {}, {}, p, needs_grad});
        return Var(this, nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, std::size_t> param_nodes_;
    bool consumed_ = false;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

// ---------------------------------------------------------------------------
// Ops

namespace detail {

[[noreturn]] inline void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw ValidationError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

inline void require_same_shape(const char* op, Var a, Var b) {
    if (!a.value().same_shape(b.value())) shape_error(op, a.value(), b.value());
}

inline Tape& tape_of(Var a) {
    if (!a.valid()) throw ValidationError("operation on an unbound Var");
    return *a.tape();
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

/// C = A * B (plain, no tape).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    Tensor c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

/// A^T * B
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    Tensor c(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k)
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = a(k, i);
            if (aki == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aki * b(k, j);
        }
    return c;
}

/// A * B^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    Tensor c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
            c(i, j) = s;
        }
    return c;
}

template <typename F>
Var unary(Var a, const char* op, F f, std::function<double(double x, double y)> df) {
    auto& t = tape_of(a);
    const Tensor& x = a.value();
    Tensor y(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    const auto ia = a.id();
    return t.push(std::move(y), {a},
                  [ia, df, self = t.size()](Tape& tp, const Tensor& g) {
                      const Tensor& xv = tp.value(ia);
                      const Tensor& yv = tp.value(self);
                      Tensor d(xv.rows(), xv.cols());
                      for (std::size_t i = 0; i < xv.size(); ++i) d[i] = g[i] * df(xv[i], yv[i]);
                      tp.accumulate(ia, d);
                  },
                  op);
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
    auto& t = detail::tape_of(a);
    if (a.cols() != b.rows()) detail::shape_error("matmul", a.value(), b.value());
    const auto ia = a.id(), ib = b.id();
    return t.push(detail::matmul(a.value(), b.value()), {a, b},
                  [ia, ib](Tape& tp, const Tensor& g) {
                      if (tp.needs_grad(ia)) tp.accumulate(ia, detail::matmul_nt(g, tp.value(ib)));
                      if (tp.needs_grad(ib)) tp.accumulate(ib, detail::matmul_tn(tp.value(ia), g));
                  },
                  "matmul");
}

inline Var add(Var a, Var b) {
    auto& t = detail::tape_of(a);
    detail::require_same_shape("add", a, b);
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
    const auto ia = a.id(), ib = b.id();
    return t.push(std::move(y), {a, b},
                  [ia, ib](Tape& tp, const Tensor& g) {
                      tp.accumulate(ia, g);
                      tp.accumulate(ib, g);
                  },
                  "add");
}

inline Var sub(Var a, Var b) {
    auto& t = detail::tape_of(a);
    detail::require_same_shape("sub", a, b);
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
    const auto ia = a.id(), ib = b.id();
    return t.push(std::move(y), {a, b},
                  [ia, ib](Tape& tp, const Tensor& g) {
                      tp.accumulate(ia, g);
                      Tensor n = g;
                      for (double& x : n.data()) x = -x;
                      tp.accumulate(ib, n);
                  },
                  "sub");
}

/// A + b with b a 1 x cols row broadcast over rows.
inline Var add_row(Var a, Var b) {
    auto& t = detail::tape_of(a);
    if (b.rows() != 1 || b.cols() != a.cols()) detail::shape_error("add_row", a.value(), b.value());
    Tensor y = a.value();
    for (std::size_t r = 0; r < y.rows(); ++r)
        for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += b.value()[c];
    const auto ia = a.id(), ib = b.id();
    return t.push(std::move(y), {a, b},
                  [ia, ib](Tape& tp, const Tensor& g) {
                      tp.accumulate(ia, g);
                      if (!tp.needs_grad(ib)) return;
                      Tensor db(1, g.cols());
                      for (std::size_t r = 0; r < g.rows(); ++r)
                          for (std::size_t c = 0; c < g.cols(); ++c) db[c] += g(r, c);
                      tp.accumulate(ib, db);
                  },
                  "add_row");
}

/// X W + b.
inline Var affine(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }

/// Element-wise product.
inline Var mul(Var a, Var b) {
    auto& t = detail::tape_of(a);
    detail::require_same_shape("mul", a, b);
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
    const auto ia = a.id(), ib = b.id();
    return t.push(std::move(y), {a, b},
                  [ia, ib](Tape& tp, const Tensor& g) {
                      const Tensor& av = tp.value(ia);
                      const Tensor& bv = tp.value(ib);
                      if (tp.needs_grad(ia)) {
                          Tensor d = g;
                          for (std::size_t i = 0; i < d.size(); ++i) d[i] *= bv[i];
                          tp.accumulate(ia, d);
                      }
                      if (tp.needs_grad(ib)) {
                          Tensor d = g;
                          for (std::size_t i = 0; i < d.size(); ++i) d[i] *= av[i];
                          tp.accumulate(ib, d);
                      }
                  },
                  "mul");
}

/// Each row of A scaled by the matching entry of the rows x 1 column c.
inline Var mul_col(Var a, Var c) {
    auto& t = detail::tape_of(a);
    if (c.cols() != 1 || c.rows() != a.rows()) detail::shape_error("mul_col", a.value(), c.value());
    Tensor y = a.value();
    for (std::size_t r = 0; r < y.rows(); ++r)
        for (double& v : y.row_span(r)) v *= c.value()[r];
    const auto ia = a.id(), ic = c.id();
    return t.push(std::move(y), {a, c},
                  [ia, ic](Tape& tp, const Tensor& g) {
                      const Tensor& av = tp.value(ia);
                      const Tensor& cv = tp.value(ic);
                      if (tp.needs_grad(ia)) {
                          Tensor d = g;
                          for (std::size_t r = 0; r < d.rows(); ++r)
                              for (double& v : d.row_span(r)) v *= cv[r];
                          tp.accumulate(ia, d);
                      }
                      if (tp.needs_grad(ic)) {
                          Tensor d(cv.rows(), 1);
                          for (std::size_t r = 0; r < g.rows(); ++r)
                              for (std::size_t k = 0; k < g.cols(); ++k) d[r] += g(r, k) * av(r, k);
                          tp.accumulate(ic, d);
                      }
                  },
                  "mul_col");
}

inline Var scale(Var a, double s) {
    return detail::unary(
        a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Var sigmoid(Var a) {
    return detail::unary(
        a, "sigmoid", [](double x) { return detail::sigmoid(x); }, [](double, double y) { return y * (1.0 - y); });
}

inline Var softplus(Var a) {
    return detail::unary(
        a, "softplus", [](double x) { return detail::softplus(x); },
        [](double x, double) { return detail::sigmoid(x); });
}

inline Var tanh(Var a) {
    return detail::unary(
        a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var square(Var a) {
    return detail::unary(
        a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

namespace detail {

/// Row softmax restricted to entries where keep != 0 (others output 0).
inline Var softmax_rows_impl(Var a, const Tensor* keep, const char* op) {
    auto& t = tape_of(a);
    const Tensor& x = a.value();
    Tensor y(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < x.cols(); ++c)
            if (!keep || (*keep)(r, c) != 0.0) mx = std::max(mx, x(r, c));
        if (!std::isfinite(mx)) throw ValidationError(std::string(op) + ": row with no kept entries");
        double s = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c)
            if (!keep || (*keep)(r, c) != 0.0) s += (y(r, c) = std::exp(x(r, c) - mx));
        for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) /= s;
    }
    const auto ia = a.id();
    return t.push(std::move(y), {a},
                  [ia, self = t.size()](Tape& tp, const Tensor& g) {
                      const Tensor& yv = tp.value(self);
                      Tensor d(yv.rows(), yv.cols());
                      for (std::size_t r = 0; r < yv.rows(); ++r) {
                          double dot = 0.0;
                          for (std::size_t c = 0; c < yv.cols(); ++c) dot += g(r, c) * yv(r, c);
                          for (std::size_t c = 0; c < yv.cols(); ++c) d(r, c) = yv(r, c) * (g(r, c) - dot);
                      }
                      tp.accumulate(ia, d);
                  },
                  op);
}

}  // namespace detail

inline Var softmax_rows(Var a) { return detail::softmax_rows_impl(a, nullptr, "softmax_rows"); }

/// Softmax over the entries of each row where `keep` is nonzero; zeros elsewhere.
/// Gradients reach kept entries only.
inline Var masked_softmax_rows(Var a, const Tensor& keep) {
    if (!keep.same_shape(a.value())) detail::shape_error("masked_softmax_rows", a.value(), keep);
    return detail::softmax_rows_impl(a, &keep, "masked_softmax_rows");
}

/// Row-wise layer normalization with 1 x cols gain and bias.
inline Var layernorm_rows(Var x, Var gain, Var bias, double eps) {
    auto& t = detail::tape_of(x);
    const std::size_t n = x.cols();
    if (gain.rows() != 1 || gain.cols() != n) detail::shape_error("layernorm gain", x.value(), gain.value());
    if (bias.rows() != 1 || bias.cols() != n) detail::shape_error("layernorm bias", x.value(), bias.value());
    const Tensor& xv = x.value();
    Tensor xhat(xv.rows(), n), inv(xv.rows(), 1), y(xv.rows(), n);
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        double mu = 0.0;
        for (const double v : xv.row_span(r)) mu += v;
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (const double v : xv.row_span(r)) var += (v - mu) * (v - mu);
        var /= static_cast<double>(n);
        inv[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < n; ++c) {
            xhat(r, c) = (xv(r, c) - mu) * inv[r];
            y(r, c) = xhat(r, c) * gain.value()[c] + bias.value()[c];
        }
    }
    const auto ix = x.id(), ig = gain.id(), ib = bias.id();
    return t.push(std::move(y), {x, gain, bias},
                  [ix, ig, ib, xhat = std::move(xhat), inv = std::move(inv)](Tape& tp, const Tensor& g) {
                      const Tensor& gv = tp.value(ig);
                      const std::size_t cols = g.cols();
                      if (tp.needs_grad(ix)) {
                          Tensor d(g.rows(), cols);
                          for (std::size_t r = 0; r < g.rows(); ++r) {
                              double s1 = 0.0, s2 = 0.0;
                              for (std::size_t c = 0; c < cols; ++c) {
                                  const double dh = g(r, c) * gv[c];
                                  s1 += dh;
                                  s2 += dh * xhat(r, c);
                              }
                              for (std::size_t c = 0; c < cols; ++c) {
                                  const double dh = g(r, c) * gv[c];
                                  d(r, c) = inv[r] / static_cast<double>(cols) *
                                            (static_cast<double>(cols) * dh - s1 - xhat(r, c) * s2);
                              }
                          }
                          tp.accumulate(ix, d);
                      }
                      Tensor dg(1, cols), db(1, cols);
                      for (std::size_t r = 0; r < g.rows(); ++r)
                          for (std::size_t c = 0; c < cols; ++c) {
                              dg[c] += g(r, c) * xhat(r, c);
                              db[c] += g(r, c);
                          }
                      tp.accumulate(ig, dg);
                      tp.accumulate(ib, db);
                  },
                  "layernorm");
}

/// Inverted dropout with a pre-drawn keep mask (0/1 entries): survivors are
/// scaled by 1/(1-p). Pass p = 0 or an all-ones mask for eval mode.
inline Var dropout(Var x, const Tensor& keep_mask, double p) {
    if (!keep_mask.same_shape(x.value())) detail::shape_error("dropout", x.value(), keep_mask);
    if (p < 0.0 || p >= 1.0) throw ValidationError("dropout p must be in [0, 1)");
    auto& t = detail::tape_of(x);
    const double s = 1.0 / (1.0 - p);
    Tensor m(keep_mask.rows(), keep_mask.cols());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = keep_mask[i] != 0.0 ? s : 0.0;
    Tensor y = x.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= m[i];
    const auto ix = x.id();
    return t.push(std::move(y), {x},
                  [ix, m = std::move(m)](Tape& tp, const Tensor& g) {
                      Tensor d = g;
                      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= m[i];
                      tp.accumulate(ix, d);
                  },
                  "dropout");
}

/// Horizontal concatenation; all parts must have the same row count.
inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ValidationError("concat_cols: no inputs");
    auto& t = detail::tape_of(parts.front());
    const std::size_t rows = parts.front().rows();
    std::size_t cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != rows) detail::shape_error("concat_cols", parts.front().value(), p.value());
        cols += p.cols();
    }
    Tensor y(rows, cols);
    std::vector<std::size_t> ids, offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < p.cols(); ++c) y(r, off + c) = p.value()(r, c);
        ids.push_back(p.id());
        offsets.push_back(off);
        off += p.cols();
    }
    return t.push(std::move(y), parts,
                  [ids, offsets](Tape& tp, const Tensor& g) {
                      for (std::size_t k = 0; k < ids.size(); ++k) {
                          if (!tp.needs_grad(ids[k])) continue;
                          const std::size_t w = tp.value(ids[k]).cols();
                          Tensor d(g.rows(), w);
                          for (std::size_t r = 0; r < g.rows(); ++r)
                              for (std::size_t c = 0; c < w; ++c) d(r, c) = g(r, offsets[k] + c);
                          tp.accumulate(ids[k], d);
                      }
                  },
                  "concat_cols");
}

inline Var slice_cols(Var a, std::size_t start, std::size_t len) {
    auto& t = detail::tape_of(a);
    if (start + len > a.cols())
        throw ValidationError("slice_cols: [" + std::to_string(start) + "," + std::to_string(start + len) +
                              ") out of " + a.value().shape_str());
    Tensor y(a.rows(), len);
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < len; ++c) y(r, c) = a.value()(r, start + c);
    const auto ia = a.id();
    const std::size_t cols = a.cols();
    return t.push(std::move(y), {a},
                  [ia, start, len, cols](Tape& tp, const Tensor& g) {
                      Tensor d(g.rows(), cols);
                      for (std::size_t r = 0; r < g.rows(); ++r)
                          for (std::size_t c = 0; c < len; ++c) d(r, start + c) = g(r, c);
                      tp.accumulate(ia, d);
                  },
                  "slice_cols");
}

/// Rows of A selected by index (duplicates allowed).
inline Var gather_rows(Var a, std::vector<std::size_t> index) {
    auto& t = detail::tape_of(a);
    Tensor y(index.size(), a.cols());
    for (std::size_t k = 0; k < index.size(); ++k) {
        if (index[k] >= a.rows())
            throw ValidationError("gather_rows: index " + std::to_string(index[k]) + " out of " + a.value().shape_str());
        const auto src = a.value().row_span(index[k]);
        std::copy(src.begin(), src.end(), y.row_span(k).begin());
    }
    const auto ia = a.id();
    const std::size_t rows = a.rows();
    return t.push(std::move(y), {a},
                  [ia, rows, index = std::move(index)](Tape& tp, const Tensor& g) {
                      Tensor d(rows, g.cols());
                      for (std::size_t k = 0; k < index.size(); ++k)
                          for (std::size_t c = 0; c < g.cols(); ++c) d(index[k], c) += g(k, c);
                      tp.accumulate(ia, d);
                  },
                  "gather_rows");
}

/// out[index[k]] += A[k]; out has `out_rows` rows.
inline Var scatter_add_rows(Var a, std::vector<std::size_t> index, std::size_t out_rows) {
    auto& t = detail::tape_of(a);
    if (index.size() != a.rows())
        throw ValidationError("scatter_add_rows: " + std::to_string(index.size()) + " indices for " +
                              a.value().shape_str());
    Tensor y(out_rows, a.cols());
    for (std::size_t k = 0; k < index.size(); ++k) {
        if (index[k] >= out_rows) throw ValidationError("scatter_add_rows: index out of range");
        for (std::size_t c = 0; c < a.cols(); ++c) y(index[k], c) += a.value()(k, c);
    }
    const auto ia = a.id();
    return t.push(std::move(y), {a},
                  [ia, index = std::move(index)](Tape& tp, const Tensor& g) {
                      Tensor d(index.size(), g.cols());
                      for (std::size_t k = 0; k < index.size(); ++k)
                          for (std::size_t c = 0; c < g.cols(); ++c) d(k, c) = g(index[k], c);
                      tp.accumulate(ia, d);
                  },
                  "scatter_add_rows");
}

/// A with the listed rows replaced by the 1 x cols `token`.
inline Var replace_rows(Var a, Var token, const std::vector<std::size_t>& rows_to_replace) {
    auto& t = detail::tape_of(a);
    if (token.rows() != 1 || token.cols() != a.cols()) detail::shape_error("replace_rows", a.value(), token.value());
    std::vector<char> is_masked(a.rows(), 0);
    for (const auto r : rows_to_replace) {
        if (r >= a.rows()) throw ValidationError("replace_rows: row index out of range");
        is_masked[r] = 1;
    }
    Tensor y = a.value();
    for (std::size_t r = 0; r < y.rows(); ++r)
        if (is_masked[r])
            for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) = token.value()[c];
    const auto ia = a.id(), it = token.id();
    return t.push(std::move(y), {a, token},
                  [ia, it, is_masked = std::move(is_masked)](Tape& tp, const Tensor& g) {
                      Tensor da = g, dt(1, g.cols());
                      for (std::size_t r = 0; r < g.rows(); ++r)
                          if (is_masked[r])
                              for (std::size_t c = 0; c < g.cols(); ++c) {
                                  dt[c] += g(r, c);
                                  da(r, c) = 0.0;
                              }
                      tp.accumulate(ia, da);
                      tp.accumulate(it, dt);
                  },
                  "replace_rows");
}

/// Softmax of the E x 1 column `e` within groups given by `segment` (values < num_segments).
inline Var segment_softmax(Var e, std::vector<std::size_t> segment, std::size_t num_segments) {
    auto& t = detail::tape_of(e);
    if (e.cols() != 1 || segment.size() != e.rows())
        throw ValidationError("segment_softmax: expected E x 1 scores matching " + std::to_string(segment.size()) +
                              " segment ids, got " + e.value().shape_str());
    const Tensor& x = e.value();
    std::vector<double> mx(num_segments, -std::numeric_limits<double>::infinity()), sum(num_segments, 0.0);
    for (std::size_t k = 0; k < segment.size(); ++k) {
        if (segment[k] >= num_segments) throw ValidationError("segment_softmax: segment id out of range");
        mx[segment[k]] = std::max(mx[segment[k]], x[k]);
    }
    Tensor y(x.rows(), 1);
    for (std::size_t k = 0; k < segment.size(); ++k) sum[segment[k]] += (y[k] = std::exp(x[k] - mx[segment[k]]));
    for (std::size_t k = 0; k < segment.size(); ++k) y[k] /= sum[segment[k]];
    const auto ie = e.id();
    return t.push(std::move(y), {e},
                  [ie, num_segments, segment = std::move(segment), self = t.size()](Tape& tp, const Tensor& g) {
                      const Tensor& yv = tp.value(self);
                      std::vector<double> dot(num_segments, 0.0);
                      for (std::size_t k = 0; k < segment.size(); ++k) dot[segment[k]] += g[k] * yv[k];
                      Tensor d(yv.rows(), 1);
                      for (std::size_t k = 0; k < segment.size(); ++k) d[k] = yv[k] * (g[k] - dot[segment[k]]);
                      tp.accumulate(ie, d);
                  },
                  "segment_softmax");
}

/// Sum of all entries, 1 x 1.
inline Var sum(Var a) {
    auto& t = detail::tape_of(a);
    double s = 0.0;
    for (const double v : a.value().data()) s += v;
    const auto ia = a.id();
    const std::size_t r = a.rows(), c = a.cols();
    return t.push(Tensor(1, 1, s), {a},
                  [ia, r, c](Tape& tp, const Tensor& g) { tp.accumulate(ia, Tensor(r, c, g[0])); }, "sum");
}

inline Var mean(Var a) {
    if (a.value().empty()) throw ValidationError("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

/// Per-row sums, rows x 1.
inline Var row_sums(Var a) {
    auto& t = detail::tape_of(a);
    Tensor y(a.rows(), 1);
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (const double v : a.value().row_span(r)) y[r] += v;
    const auto ia = a.id();
    const std::size_t cols = a.cols();
    return t.push(std::move(y), {a},
                  [ia, cols](Tape& tp, const Tensor& g) {
                      Tensor d(g.rows(), cols);
                      for (std::size_t r = 0; r < g.rows(); ++r)
                          for (std::size_t c = 0; c < cols; ++c) d(r, c) = g[r];
                      tp.accumulate(ia, d);
                  },
                  "row_sums");
}

/// Column means, 1 x cols.
inline Var col_means(Var a) {
    auto& t = detail::tape_of(a);
    if (a.rows() == 0) throw ValidationError("col_means of a tensor with no rows");
    const double inv = 1.0 / static_cast<double>(a.rows());
    Tensor y(1, a.cols());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) y[c] += a.value()(r, c);
    for (double& v : y.data()) v *= inv;
    const auto ia = a.id();
    const std::size_t rows = a.rows();
    return t.push(std::move(y), {a},
                  [ia, rows, inv](Tape& tp, const Tensor& g) {
                      Tensor d(rows, g.cols());
                      for (std::size_t r = 0; r < rows; ++r)
                          for (std::size_t c = 0; c < g.cols(); ++c) d(r, c) = g[c] * inv;
                      tp.accumulate(ia, d);
                  },
                  "col_means");
}

/// Mean squared error over all entries, 1 x 1.
inline Var mse(Var pred, Var target) {
    detail::require_same_shape("mse", pred, target);
    return mean(square(sub(pred, target)));
}

/// Mean binary cross-entropy between sigmoid(logits) and {0,1} (or soft) targets.
inline Var bce_with_logits(Var logits, const Tensor& target) {
    auto& t = detail::tape_of(logits);
    if (!target.same_shape(logits.value())) detail::shape_error("bce_with_logits", logits.value(), target);
    const Tensor& x = logits.value();
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        s += std::max(x[i], 0.0) - x[i] * target[i] + std::log1p(std::exp(-std::abs(x[i])));
    const double n = static_cast<double>(x.size());
    const auto il = logits.id();
    return t.push(Tensor(1, 1, s / n), {logits},
                  [il, n, target](Tape& tp, const Tensor& g) {
                      const Tensor& xv = tp.value(il);
                      Tensor d(xv.rows(), xv.cols());
                      for (std::size_t i = 0; i < xv.size(); ++i) d[i] = g[0] * (detail::sigmoid(xv[i]) - target[i]) / n;
                      tp.accumulate(il, d);
                  },
                  "bce_with_logits");
}

/// Mean over rows of -log softmax(logits)[row, label[row]].
inline Var cross_entropy(Var logits, std::vector<std::size_t> labels) {
    auto& t = detail::tape_of(logits);
    if (labels.size() != logits.rows()) throw ValidationError("cross_entropy: label count != rows");
    const Tensor& x = logits.value();
    Tensor p(x.rows(), x.cols());
    double loss = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        if (labels[r] >= x.cols()) throw ValidationError("cross_entropy: label out of range");
        double mx = -std::numeric_limits<double>::infinity();
        for (const double v : x.row_span(r)) mx = std::max(mx, v);
        double s = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) s += (p(r, c) = std::exp(x(r, c) - mx));
        for (std::size_t c = 0; c < x.cols(); ++c) p(r, c) /= s;
        loss -= x(r, labels[r]) - mx - std::log(s);
    }
    const double n = static_cast<double>(x.rows());
    const auto il = logits.id();
    return t.push(Tensor(1, 1, loss / n), {logits},
                  [il, n, p = std::move(p), labels = std::move(labels)](Tape& tp, const Tensor& g) {
                      Tensor d = p;
                      for (std::size_t r = 0; r < d.rows(); ++r) d(r, labels[r]) -= 1.0;
                      for (double& v : d.data()) v *= g[0] / n;
                      tp.accumulate(il, d);
                  },
                  "cross_entropy");
}

/// Jensen-Shannon divergence (natural log) between two 1 x n probability rows.
inline Var js_divergence(Var p, Var q) {
    auto& t = detail::tape_of(p);
    detail::require_same_shape("js_divergence", p, q);
    if (p.rows() != 1) throw ValidationError("js_divergence expects 1 x n rows, got " + p.value().shape_str());
    const Tensor& pv = p.value();
    const Tensor& qv = q.value();
    double js = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        const double m = 0.5 * (pv[i] + qv[i]);
        if (pv[i] > 0.0) js += 0.5 * pv[i] * std::log(pv[i] / m);
        if (qv[i] > 0.0) js += 0.5 * qv[i] * std::log(qv[i] / m);
    }
    const auto ip = p.id(), iq = q.id();
    return t.push(Tensor(1, 1, js), {p, q},
                  [ip, iq](Tape& tp, const Tensor& g) {
                      const Tensor& a = tp.value(ip);
                      const Tensor& b = tp.value(iq);
                      Tensor da(1, a.cols()), db(1, a.cols());
                      for (std::size_t i = 0; i < a.size(); ++i) {
                          const double m = 0.5 * (a[i] + b[i]);
                          if (a[i] > 0.0) da[i] = g[0] * 0.5 * std::log(a[i] / m);
                          if (b[i] > 0.0) db[i] = g[0] * 0.5 * std::log(b[i] / m);
                      }
                      tp.accumulate(ip, da);
                      tp.accumulate(iq, db);
                  },
                  "js_divergence");
}

/// Squared coefficient of variation (population std / mean)^2 of a 1 x n row.
inline Var cv_squared(Var x) {
    auto& t = detail::tape_of(x);
    if (x.rows() != 1 || x.cols() == 0) throw ValidationError("cv_squared expects a non-empty 1 x n row");
    const Tensor& v = x.value();
    const double n = static_cast<double>(v.size());
    double mu = 0.0;
    for (const double a : v.data()) mu += a;
    mu /= n;
    if (mu == 0.0) throw NumericalError("cv_squared: zero mean");
    double var = 0.0;
    for (const double a : v.data()) var += (a - mu) * (a - mu);
    var /= n;
    const auto ix = x.id();
    return t.push(Tensor(1, 1, var / (mu * mu)), {x},
                  [ix, mu, var, n](Tape& tp, const Tensor& g) {
                      const Tensor& xv = tp.value(ix);
                      Tensor d(1, xv.cols());
                      for (std::size_t i = 0; i < xv.size(); ++i)
                          d[i] = g[0] * (2.0 * (xv[i] - mu) / (n * mu * mu) - 2.0 * var / (n * mu * mu * mu));
                      tp.accumulate(ix, d);
                  },
                  "cv_squared");
}

}  // namespace adaptgot::ad
