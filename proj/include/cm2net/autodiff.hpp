#pragma once

// Define-by-run reverse-mode differentiation. A Tape is built fresh for each
// forward pass; every op appends one node whose inputs precede it.

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cm2net/error.hpp"
#include "cm2net/tensor.hpp"

namespace cm2 {

/// A named trainable tensor. `grad_ready` is set by Tape::backward and cleared
/// by the optimizer once consumed.
struct Parameter {
  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape())) {}

  std::string name;
  Tensor value;
  Tensor grad;
  bool frozen = false;
  bool grad_ready = false;

  void zero_grad() { std::fill(grad.data().begin(), grad.data().end(), 0.0); }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

struct BackwardArgs {
  const Tensor& out_value;
  const Tensor& out_grad;
  std::span<const Tensor* const> inputs;
  /// One slot per input; nullptr where that input needs no gradient.
  std::span<Tensor* const> input_grads;
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

class Tape {
 public:
  struct Record {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push("constant", {}, std::move(value), false, {}, nullptr); }

  /// Differentiable leaf that is not a Parameter; read its gradient with grad().
  Var leaf(Tensor value) { return push("leaf", {}, std::move(value), true, {}, nullptr); }

  /// Frozen parameters enter the tape as constants.
  Var param(Parameter& p) { return push("param", {}, p.value, !p.frozen, {}, &p); }

  /// Appends an op node. `backward` is dropped when no input requires a gradient.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(op, std::move(value), std::vector<Var>(inputs), std::move(backward));
  }

  Var record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    bool needs = false;
    for (const Var& v : inputs) {
      if (v.tape() != this) throw TapeError(std::string(op) + ": input belongs to a different tape");
      ids.push_back(v.id());
      needs = needs || nodes_[v.id()].requires_grad;
    }
    if (!value.all_finite()) {
      throw NumericError(std::string(op) + " produced a non-finite value");
    }
    return push(op, std::move(ids), std::move(value), needs, needs ? std::move(backward) : BackwardFn{},
                nullptr);
  }

  /// Propagates d(root)/d(node) to every node and writes parameter gradients.
  /// Frozen parameters on the tape get a zero gradient. A tape supports one backward pass.
  void backward(Var root) {
    if (root.tape() != this) throw TapeError("backward: root belongs to a different tape");
    if (consumed_) throw TapeError("backward called twice on the same tape; run a new forward pass");
    const Record& r = nodes_[root.id()];
    if (r.value.size() != 1) {
      throw TapeError("backward root must be scalar, got shape " + shape_str(r.value.shape()));
    }
    consumed_ = true;

    for (Record& n : nodes_) {
      if (n.param) {
        n.param->zero_grad();
        n.param->grad_ready = true;
      }
    }
    if (!r.requires_grad) return;

    nodes_[root.id()].grad = Tensor::ones(r.value.shape());
    std::vector<const Tensor*> in_vals;
    std::vector<Tensor*> in_grads;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Record& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) {
        in_vals.clear();
        in_grads.clear();
        for (std::size_t in : n.inputs) {
          Record& src = nodes_[in];
          in_vals.push_back(&src.value);
          if (src.requires_grad) {
            if (src.grad.size() == 0) src.grad = Tensor::zeros(src.value.shape());
            in_grads.push_back(&src.grad);
          } else {
            in_grads.push_back(nullptr);
          }
        }
        n.backward(BackwardArgs{n.value, n.grad, in_vals, in_grads});
      }
      if (n.param) {
        auto dst = n.param->grad.data();
        auto src = n.grad.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }

  /// Gradient of the last backward root with respect to `v` (zeros if unreachable).
  Tensor grad(Var v) const {
    const Record& n = nodes_.at(v.id());
    return n.grad.size() ? n.grad : Tensor::zeros(n.value.shape());
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const Record& record_at(std::size_t id) const { return nodes_.at(id); }
  bool consumed() const noexcept { return consumed_; }

 private:
  Var push(std::string_view op, std::vector<std::size_t> inputs, Tensor value, bool requires_grad,
           BackwardFn backward, Parameter* param) {
    nodes_.push_back(Record{std::string(op), std::move(inputs), std::move(value), Tensor{}, requires_grad,
                            std::move(backward), param});
    return Var(this, nodes_.size() - 1);
  }

  // deque keeps element references stable across push_back
  std::deque<Record> nodes_;
  bool consumed_ = false;
};

inline const Tensor& Var::value() const {
  if (!tape_) throw TapeError("use of an unbound variable");
  return tape_->value(id_);
}

inline bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

namespace detail {

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

inline void require_same_tape(const char* op, Var a, Var b) {
  if (a.tape() != b.tape()) throw TapeError(std::string(op) + ": operands on different tapes");
}

/// Elementwise unary op with derivative expressed through (x, y).
template <class F, class D>
Var unary(const char* op, Var x, F f, D dfdx) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  auto xs = xv.data();
  auto os = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) os[i] = f(xs[i]);
  return x.tape()->record(op, std::move(out), {x}, [dfdx](const BackwardArgs& a) {
    if (!a.input_grads[0]) return;
    auto xs = a.inputs[0]->data();
    auto ys = a.out_value.data();
    auto gs = a.out_grad.data();
    auto dst = a.input_grads[0]->data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gs[i] * dfdx(xs[i], ys[i]);
  });
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::require_same_tape("matmul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " +
                         shape_str(bv.shape()));
  }
  return a.tape()->record("matmul", kernels::matmul(av, bv), {a, b}, [](const BackwardArgs& g) {
    if (g.input_grads[0]) kernels::matmul_bt_acc(g.out_grad, *g.inputs[1], *g.input_grads[0]);
    if (g.input_grads[1]) kernels::matmul_at_acc(*g.inputs[0], g.out_grad, *g.input_grads[1]);
  });
}

inline Var transpose(Var a) {
  return a.tape()->record("transpose", kernels::transpose(a.value()), {a}, [](const BackwardArgs& g) {
    if (!g.input_grads[0]) return;
    Tensor& dst = *g.input_grads[0];
    const std::size_t m = dst.rows(), n = dst.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dst.at(i, j) += g.out_grad.at(j, i);
  });
}

inline Var add(Var a, Var b) {
  detail::require_same_tape("add", a, b);
  detail::require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  auto bs = b.value().data();
  auto os = out.data();
  for (std::size_t i = 0; i < os.size(); ++i) os[i] += bs[i];
  return a.tape()->record("add", std::move(out), {a, b}, [](const BackwardArgs& g) {
    auto gs = g.out_grad.data();
    for (Tensor* dst : g.input_grads) {
      if (!dst) continue;
      auto d = dst->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += gs[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_tape("sub", a, b);
  detail::require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  auto bs = b.value().data();
  auto os = out.data();
  for (std::size_t i = 0; i < os.size(); ++i) os[i] -= bs[i];
  return a.tape()->record("sub", std::move(out), {a, b}, [](const BackwardArgs& g) {
    auto gs = g.out_grad.data();
    if (g.input_grads[0]) {
      auto d = g.input_grads[0]->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += gs[i];
    }
    if (g.input_grads[1]) {
      auto d = g.input_grads[1]->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= gs[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same_tape("mul", a, b);
  detail::require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  auto bs = b.value().data();
  auto os = out.data();
  for (std::size_t i = 0; i < os.size(); ++i) os[i] *= bs[i];
  return a.tape()->record("mul", std::move(out), {a, b}, [](const BackwardArgs& g) {
    auto gs = g.out_grad.data();
    auto as = g.inputs[0]->data();
    auto bs = g.inputs[1]->data();
    if (g.input_grads[0]) {
      auto d = g.input_grads[0]->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += gs[i] * bs[i];
    }
    if (g.input_grads[1]) {
      auto d = g.input_grads[1]->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += gs[i] * as[i];
    }
  });
}

/// x * s for a constant scalar s.
inline Var scale(Var x, double s) {
  return detail::unary(
      "scale", x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

inline Var relu(Var x) {
  return detail::unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var tanh(Var x) {
  return detail::unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var exp(Var x) {
  return detail::unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var log(Var x) {
  for (double v : x.value().data()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return detail::unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape()->record("sum", Tensor::scalar(s), {x}, [](const BackwardArgs& g) {
    if (!g.input_grads[0]) return;
    const double gv = g.out_grad[0];
    for (double& d : g.input_grads[0]->data()) d += gv;
  });
}

inline Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape()->record("mean", Tensor::scalar(s / n), {x}, [n](const BackwardArgs& g) {
    if (!g.input_grads[0]) return;
    const double gv = g.out_grad[0] / n;
    for (double& d : g.input_grads[0]->data()) d += gv;
  });
}

/// Mean over one axis; the axis is removed from the output shape.
inline Var mean_over_axis(Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  if (axis >= xv.rank()) {
    throw DimensionError("mean_over_axis: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(xv.shape()));
  }
  const Shape& s = xv.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  Tensor out(out_shape);
  auto xs = xv.data();
  auto os = out.data();
  const double inv = 1.0 / static_cast<double>(len);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < len; ++k) {
      const double* src = xs.data() + (o * len + k) * inner;
      double* dst = os.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
    for (std::size_t i = 0; i < inner; ++i) os[o * inner + i] *= inv;
  }
  return x.tape()->record("mean_over_axis", std::move(out), {x},
                          [outer, inner, len, inv](const BackwardArgs& g) {
                            if (!g.input_grads[0]) return;
                            auto gs = g.out_grad.data();
                            auto d = g.input_grads[0]->data();
                            for (std::size_t o = 0; o < outer; ++o)
                              for (std::size_t k = 0; k < len; ++k)
                                for (std::size_t i = 0; i < inner; ++i)
                                  d[(o * len + k) * inner + i] += gs[o * inner + i] * inv;
                          });
}

inline Var reshape(Var x, Shape shape) {
  return x.tape()->record("reshape", x.value().reshaped(std::move(shape)), {x}, [](const BackwardArgs& g) {
    if (!g.input_grads[0]) return;
    auto gs = g.out_grad.data();
    auto d = g.input_grads[0]->data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += gs[i];
  });
}

/// x (n x d) + row (d or 1 x d) added to every row. The one explicit broadcast.
inline Var add_rowwise(Var x, Var row) {
  detail::require_same_tape("add_rowwise", x, row);
  const Tensor& xv = x.value();
  const Tensor& rv = row.value();
  kernels::require_matrix(xv, "add_rowwise");
  const std::size_t n = xv.rows(), d = xv.cols();
  if (rv.size() != d || rv.rank() > 2 || (rv.rank() == 2 && rv.rows() != 1)) {
    throw DimensionError("add_rowwise: row shape " + shape_str(rv.shape()) + " does not match " +
                         shape_str(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) += rv[j];
  return x.tape()->record("add_rowwise", std::move(out), {x, row}, [n, d](const BackwardArgs& g) {
    if (g.input_grads[0]) {
      auto dst = g.input_grads[0]->data();
      auto gs = g.out_grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gs[i];
    }
    if (g.input_grads[1]) {
      Tensor& dst = *g.input_grads[1];
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) dst[j] += g.out_grad.at(i, j);
    }
  });
}

/// Rows of `table` selected by `index`: out[b] = table[index[b]].
inline Var index_rows(Var table, std::vector<std::size_t> index) {
  const Tensor& tv = table.value();
  kernels::require_matrix(tv, "index_rows");
  const std::size_t n = tv.rows(), d = tv.cols();
  Tensor out({index.size(), d});
  for (std::size_t b = 0; b < index.size(); ++b) {
    if (index[b] >= n) throw DimensionError("index_rows: index " + std::to_string(index[b]) + " out of range");
    for (std::size_t j = 0; j < d; ++j) out.at(b, j) = tv.at(index[b], j);
  }
  return table.tape()->record("index_rows", std::move(out), {table},
                              [index = std::move(index), d](const BackwardArgs& g) {
                                if (!g.input_grads[0]) return;
                                Tensor& dst = *g.input_grads[0];
                                for (std::size_t b = 0; b < index.size(); ++b)
                                  for (std::size_t j = 0; j < d; ++j) dst.at(index[b], j) += g.out_grad.at(b, j);
                              });
}

/// One entry per row: out[b] = x[b, column[b]].
inline Var pick(Var x, std::vector<std::size_t> column) {
  const Tensor& xv = x.value();
  kernels::require_matrix(xv, "pick");
  if (column.size() != xv.rows()) {
    throw DimensionError("pick: " + std::to_string(column.size()) + " indices for " +
                         std::to_string(xv.rows()) + " rows");
  }
  Tensor out({column.size()});
  for (std::size_t b = 0; b < column.size(); ++b) {
    if (column[b] >= xv.cols()) throw DimensionError("pick: column " + std::to_string(column[b]) + " out of range");
    out[b] = xv.at(b, column[b]);
  }
  return x.tape()->record("pick", std::move(out), {x}, [column = std::move(column)](const BackwardArgs& g) {
    if (!g.input_grads[0]) return;
    for (std::size_t b = 0; b < column.size(); ++b) g.input_grads[0]->at(b, column[b]) += g.out_grad[b];
  });
}

inline Var diagonal(Var x) {
  const Tensor& xv = x.value();
  kernels::require_matrix(xv, "diagonal");
  if (xv.rows() != xv.cols()) throw DimensionError("diagonal: non-square " + shape_str(xv.shape()));
  std::vector<std::size_t> idx(xv.rows());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return pick(x, std::move(idx));
}

inline constexpr double kNormEpsilon = 1e-12;

/// Unit L2 norm along the last axis.
inline Var l2_normalize(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() == 0) throw DimensionError("l2_normalize: scalar input");
  const std::size_t d = xv.shape().back();
  const std::size_t n = xv.size() / d;
  Tensor out = xv;
  std::vector<double> norms(n);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += xv[r * d + j] * xv[r * d + j];
    const double norm = std::sqrt(s);
    if (!(norm >= kNormEpsilon)) {
      throw DegenerateInputError("l2_normalize: slice " + std::to_string(r) + " has near-zero norm");
    }
    norms[r] = norm;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] /= norm;
  }
  return x.tape()->record("l2_normalize", std::move(out), {x},
                          [norms = std::move(norms), d](const BackwardArgs& g) {
                            if (!g.input_grads[0]) return;
                            // dx = (g - y (g.y)) / |x|
                            auto ys = g.out_value.data();
                            auto gs = g.out_grad.data();
                            auto dst = g.input_grads[0]->data();
                            for (std::size_t r = 0; r < norms.size(); ++r) {
                              double dot = 0.0;
                              for (std::size_t j = 0; j < d; ++j) dot += gs[r * d + j] * ys[r * d + j];
                              for (std::size_t j = 0; j < d; ++j)
                                dst[r * d + j] += (gs[r * d + j] - ys[r * d + j] * dot) / norms[r];
                            }
                          });
}

/// Row-wise log-softmax with max subtraction.
inline Var log_softmax_rows(Var logits) {
  const Tensor& lv = logits.value();
  kernels::require_matrix(lv, "log_softmax_rows");
  if (!lv.all_finite()) throw NumericError("log_softmax_rows: non-finite logits");
  const std::size_t b = lv.rows(), c = lv.cols();
  Tensor out({b, c});
  for (std::size_t i = 0; i < b; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, lv.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(lv.at(i, j) - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = lv.at(i, j) - lse;
  }
  return logits.tape()->record("log_softmax_rows", std::move(out), {logits}, [b, c](const BackwardArgs& g) {
    if (!g.input_grads[0]) return;
    Tensor& dst = *g.input_grads[0];
    for (std::size_t i = 0; i < b; ++i) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < c; ++j) gsum += g.out_grad.at(i, j);
      for (std::size_t j = 0; j < c; ++j)
        dst.at(i, j) += g.out_grad.at(i, j) - std::exp(g.out_value.at(i, j)) * gsum;
    }
  });
}

inline Var neg(Var x) { return scale(x, -1.0); }

}  // namespace cm2
