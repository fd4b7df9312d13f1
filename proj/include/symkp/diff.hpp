#pragma once

// Reverse-mode automatic differentiation over small dense arrays.
//
// A Graph is a tape: every op appends a node holding its forward value and a
// closure that pushes the node's gradient into its inputs. Nodes are created
// in topological order, so backward is a single reverse sweep.

#include "symkp/types.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace symkp::diff {

using Shape = std::vector<std::size_t>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
// Fixed alignment keeps Eigen's vectorized reductions in the same order on
// every run, which bitwise-reproducible training depends on.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

struct Tensor {
  Shape shape;
  Buffer values;
  bool requires_grad = false;

  Tensor() = default;
  Tensor(Shape s, Buffer v, bool grad = false) : shape(std::move(s)), values(std::move(v)), requires_grad(grad) {
    if (values.size() != numel(shape))
      throw Error("tensor value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
  }
  static Tensor zeros(Shape s) {
    const std::size_t n = numel(s);
    return Tensor(std::move(s), Buffer(n, 0.0));
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor from_points(const Points& p) {
    Tensor t = zeros({static_cast<std::size_t>(p.rows()), 3});
    std::copy(p.data(), p.data() + p.size(), t.values.begin());
    return t;
  }

  std::size_t size() const noexcept { return values.size(); }
  std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.size() == 2 ? shape[1] : values.size(); }
  double item() const {
    if (values.size() != 1) throw Error("item() on tensor of shape " + shape_str(shape));
    return values[0];
  }
  ConstMapMat mat() const {
    return ConstMapMat(values.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
  }
  MapMat mat() { return MapMat(values.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())); }
  Points to_points() const {
    if (cols() != 3) throw Error("to_points on tensor of shape " + shape_str(shape));
    Points p(static_cast<Eigen::Index>(rows()), 3);
    std::copy(values.begin(), values.end(), p.data());
    return p;
  }
  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape == b.shape && a.values == b.values; }
};

class Graph;

/// Handle to a node of a Graph.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}
  Graph& graph() const {
    if (!graph_) throw Error("use of an unset Var");
    return *graph_;
  }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor t) { return push(std::move(t), false, nullptr, "constant"); }
  Var parameter(Tensor t) { return push(std::move(t), true, nullptr, "parameter"); }

  Var push(Tensor value, bool needs_grad, Backward bw, const char* op) {
    for (double v : value.values)
      if (!std::isfinite(v)) throw Error(std::string("non-finite value produced by ") + op);
    value.requires_grad = needs_grad;
    nodes_.push_back(Node{std::move(value), {}, needs_grad, std::move(bw)});
    return Var(this, nodes_.size() - 1);
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient buffer of a node, allocated (zeroed) on first touch.
  Buffer& grad_buffer(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }
  MapMat grad_mat(std::size_t id) {
    auto& g = grad_buffer(id);
    const auto& v = nodes_[id].value;
    return MapMat(g.data(), static_cast<Eigen::Index>(v.rows()), static_cast<Eigen::Index>(v.cols()));
  }

  /// Gradient of the last backward() target with respect to `v`; zeros when
  /// `v` was not reached.
  Tensor grad(Var v) {
    const auto& n = nodes_.at(v.id());
    Tensor t = Tensor::zeros(n.value.shape);
    if (n.grad.size() == n.value.size()) t.values = n.grad;
    return t;
  }

  void backward(Var loss) {
    if (!loss.valid() || &loss.graph() != this || loss.id() >= nodes_.size())
      throw Error("backward: loss does not belong to this graph (forward not run)");
    if (nodes_[loss.id()].value.size() != 1)
      throw Error("backward: loss must be scalar, got shape " + shape_str(nodes_[loss.id()].value.shape));
    for (auto& n : nodes_) n.grad.clear();
    grad_buffer(loss.id())[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.needs_grad || !n.backward || n.grad.empty()) continue;
      n.backward(*this, i);
    }
  }

 private:
  struct Node {
    Tensor value;
    Buffer grad;
    bool needs_grad;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return graph().value(id_); }

namespace detail {

inline void require(bool ok, const char* op, const Shape& a, const Shape& b) {
  if (!ok) throw Error(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline bool any_grad(Graph& g, std::initializer_list<Var> vs) {
  return std::any_of(vs.begin(), vs.end(), [&](const Var& v) { return g.needs_grad(v.id()); });
}

inline void accumulate(Graph& g, std::size_t id, const Buffer& src) {
  if (!g.needs_grad(id)) return;
  auto& dst = g.grad_buffer(id);
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

/// Elementwise unary op with derivative expressed from input x and output y.
template <class F, class D>
Var unary(Var x, const char* name, F f, D df) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  Tensor out = Tensor::zeros(xv.shape);
  for (std::size_t i = 0; i < xv.size(); ++i) out.values[i] = f(xv.values[i]);
  const std::size_t xi = x.id();
  return g.push(std::move(out), g.needs_grad(xi), [xi, df](Graph& gr, std::size_t self) {
    const auto& xv2 = gr.value(xi).values;
    const auto& yv = gr.value(self).values;
    const Buffer& gy = gr.grad_buffer(self);
    auto& gx = gr.grad_buffer(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * df(xv2[i], yv[i]);
  }, name);
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Var relu(Var x) {
  return detail::unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var leaky_relu(Var x, double slope) {
  return detail::unary(x, "leaky_relu", [slope](double v) { return v > 0.0 ? v : slope * v; },
                       [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

inline Var sin(Var x) {
  return detail::unary(x, "sin", [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

inline Var cos(Var x) {
  return detail::unary(x, "cos", [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); });
}

inline Var square(Var x) {
  return detail::unary(x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Var sqrt(Var x) {
  return detail::unary(x, "sqrt", [](double v) { return std::sqrt(v); },
                       [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

inline Var scale(Var x, double s) {
  return detail::unary(x, "scale", [s](double v) { return s * v; }, [s](double, double) { return s; });
}

inline Var add_scalar(Var x, double s) {
  return detail::unary(x, "add_scalar", [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

/// Huber penalty: x²/2 inside |x| <= delta, delta(|x| - delta/2) outside.
inline Var huber(Var x, double delta) {
  return detail::unary(
      x, "huber",
      [delta](double v) { return std::abs(v) <= delta ? 0.5 * v * v : delta * (std::abs(v) - 0.5 * delta); },
      [delta](double v, double) { return std::abs(v) <= delta ? v : (v > 0.0 ? delta : -delta); });
}

namespace detail {
template <class F, class DA, class DB>
Var binary(Var a, Var b, const char* name, F f, DA da, DB db) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.shape == bv.shape, name, av.shape, bv.shape);
  Tensor out = Tensor::zeros(av.shape);
  for (std::size_t i = 0; i < av.size(); ++i) out.values[i] = f(av.values[i], bv.values[i]);
  const std::size_t ai = a.id(), bi = b.id();
  return g.push(std::move(out), any_grad(g, {a, b}), [ai, bi, da, db](Graph& gr, std::size_t self) {
    const Buffer& gy = gr.grad_buffer(self);
    const auto& x = gr.value(ai).values;
    const auto& y = gr.value(bi).values;
    if (gr.needs_grad(ai)) {
      auto& ga = gr.grad_buffer(ai);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * da(x[i], y[i]);
    }
    if (gr.needs_grad(bi)) {
      auto& gb = gr.grad_buffer(bi);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * db(x[i], y[i]);
    }
  }, name);
}
}  // namespace detail

inline Var add(Var a, Var b) {
  return detail::binary(a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
                        [](double, double) { return 1.0; });
}
inline Var sub(Var a, Var b) {
  return detail::binary(a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
                        [](double, double) { return -1.0; });
}
inline Var mul(Var a, Var b) {
  return detail::binary(a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
                        [](double x, double) { return x; });
}
inline Var div(Var a, Var b) {
  return detail::binary(a, b, "div", [](double x, double y) { return x / y; },
                        [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

// ----------------------------------------------------------------- reductions

inline Var sum(Var x) {
  Graph& g = x.graph();
  const auto& xv = x.value().values;
  const double s = std::accumulate(xv.begin(), xv.end(), 0.0);
  const std::size_t xi = x.id();
  return g.push(Tensor::scalar(s), g.needs_grad(xi), [xi](Graph& gr, std::size_t self) {
    const double gy = gr.grad_buffer(self)[0];
    for (double& v : gr.grad_buffer(xi)) v += gy;
  }, "sum");
}

/// Product of all entries.
inline Var prod(Var x) {
  Graph& g = x.graph();
  const auto& xv = x.value().values;
  const double p = std::accumulate(xv.begin(), xv.end(), 1.0, std::multiplies<>());
  const std::size_t xi = x.id();
  return g.push(Tensor::scalar(p), g.needs_grad(xi), [xi](Graph& gr, std::size_t self) {
    const double gy = gr.grad_buffer(self)[0];
    const auto& v = gr.value(xi).values;
    auto& gx = gr.grad_buffer(xi);
    for (std::size_t i = 0; i < v.size(); ++i) {
      double others = 1.0;
      for (std::size_t j = 0; j < v.size(); ++j)
        if (j != i) others *= v[j];
      gx[i] += gy * others;
    }
  }, "prod");
}

namespace detail {
/// Max (sign=+1) or min (sign=-1) along an axis of a 2-D tensor, keeping dims.
inline Var extremum_over_set(Var x, int axis, double sign, const char* name) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  if (xv.shape.size() != 2) throw Error(std::string(name) + ": expected 2-D input, got " + shape_str(xv.shape));
  if (axis != 0 && axis != 1) throw Error(std::string(name) + ": axis must be 0 or 1");
  const std::size_t r = xv.rows(), c = xv.cols();
  const std::size_t outer = axis == 0 ? c : r, inner = axis == 0 ? r : c;
  if (inner == 0) throw Error(std::string(name) + ": empty set");
  Tensor out = Tensor::zeros(axis == 0 ? Shape{1, c} : Shape{r, 1});
  std::vector<std::size_t> winner(outer);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t best = 0;
    double best_v = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t flat = axis == 0 ? i * c + o : o * c + i;
      const double v = sign * xv.values[flat];
      if (v > best_v) {
        best_v = v;
        best = flat;
      }
    }
    winner[o] = best;
    out.values[o] = xv.values[best];
  }
  const std::size_t xi = x.id();
  return g.push(std::move(out), g.needs_grad(xi), [xi, winner](Graph& gr, std::size_t self) {
    const Buffer& gy = gr.grad_buffer(self);
    auto& gx = gr.grad_buffer(xi);
    for (std::size_t o = 0; o < winner.size(); ++o) gx[winner[o]] += gy[o];
  }, name);
}
}  // namespace detail

/// Max over the members of a set. axis 0: rows are members, result 1×C.
inline Var max_over_set(Var x, int axis = 0) { return detail::extremum_over_set(x, axis, 1.0, "max_over_set"); }
inline Var min_over_set(Var x, int axis = 0) { return detail::extremum_over_set(x, axis, -1.0, "min_over_set"); }

inline Var mean_over_set(Var x, int axis = 0) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  if (xv.shape.size() != 2) throw Error("mean_over_set: expected 2-D input, got " + shape_str(xv.shape));
  Tensor out;
  if (axis == 0) {
    out = Tensor::zeros({1, xv.cols()});
    out.mat() = xv.mat().colwise().mean();
  } else {
    out = Tensor::zeros({xv.rows(), 1});
    out.mat() = xv.mat().rowwise().mean();
  }
  const std::size_t xi = x.id();
  return g.push(std::move(out), g.needs_grad(xi), [xi, axis](Graph& gr, std::size_t self) {
    const auto& v = gr.value(xi);
    auto gy = gr.grad_mat(self);
    auto gx = gr.grad_mat(xi);
    if (axis == 0)
      gx.rowwise() += gy.row(0) / static_cast<double>(v.rows());
    else
      gx.colwise() += gy.col(0) / static_cast<double>(v.cols());
  }, "mean_over_set");
}

/// Per-group max over rows. Rows of x are assigned to groups by `groups`;
/// result is n_groups×C, empty groups give zero rows with no gradient.
inline Var segment_max(Var x, const IndexList& groups, std::size_t n_groups) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  if (xv.shape.size() != 2 || groups.size() != xv.rows())
    throw Error("segment_max: " + std::to_string(groups.size()) + " group ids for shape " + shape_str(xv.shape));
  const std::size_t c = xv.cols();
  Tensor out = Tensor::zeros({n_groups, c});
  constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> winner(n_groups * c, none);
  for (std::size_t r = 0; r < groups.size(); ++r) {
    const std::size_t gid = groups[r];
    if (gid >= n_groups) throw Error("segment_max: group id out of range");
    const double* src = xv.values.data() + r * c;
    std::size_t* win = winner.data() + gid * c;
    double* dst = out.values.data() + gid * c;
    for (std::size_t k = 0; k < c; ++k)
      if (win[k] == none || src[k] > dst[k]) {
        dst[k] = src[k];
        win[k] = r * c + k;
      }
  }
  const std::size_t xi = x.id();
  return g.push(std::move(out), g.needs_grad(xi), [xi, winner](Graph& gr, std::size_t self) {
    const Buffer& gy = gr.grad_buffer(self);
    auto& gx = gr.grad_buffer(xi);
    for (std::size_t o = 0; o < winner.size(); ++o)
      if (winner[o] != none) gx[winner[o]] += gy[o];
  }, "segment_max");
}

// -------------------------------------------------------------- linear algebra

/// x·W + b with x R×I, W I×O, b of O entries (broadcast over rows).
inline Var affine(Var x, Var w, Var b) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  detail::require(xv.shape.size() == 2 && wv.shape.size() == 2 && xv.cols() == wv.rows(), "affine", xv.shape, wv.shape);
  detail::require(bv.size() == wv.cols(), "affine(bias)", bv.shape, wv.shape);
  Tensor out = Tensor::zeros({xv.rows(), wv.cols()});
  auto y = out.mat();
  y.noalias() = xv.mat() * wv.mat();
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.values.data(), static_cast<Eigen::Index>(bv.size()));
  const std::size_t xi = x.id(), wi = w.id(), bi = b.id();
  return g.push(std::move(out), detail::any_grad(g, {x, w, b}), [xi, wi, bi](Graph& gr, std::size_t self) {
    auto gy = gr.grad_mat(self);
    if (gr.needs_grad(xi)) gr.grad_mat(xi).noalias() += gy * gr.value(wi).mat().transpose();
    if (gr.needs_grad(wi)) gr.grad_mat(wi).noalias() += gr.value(xi).mat().transpose() * gy;
    if (gr.needs_grad(bi)) {
      auto& gb = gr.grad_buffer(bi);
      Eigen::Map<Eigen::RowVectorXd>(gb.data(), static_cast<Eigen::Index>(gb.size())) += gy.colwise().sum();
    }
  }, "affine");
}

inline Var matmul(Var a, Var b) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require(av.shape.size() == 2 && bv.shape.size() == 2 && av.cols() == bv.rows(), "matmul", av.shape, bv.shape);
  Tensor out = Tensor::zeros({av.rows(), bv.cols()});
  out.mat().noalias() = av.mat() * bv.mat();
  const std::size_t ai = a.id(), bi = b.id();
  return g.push(std::move(out), detail::any_grad(g, {a, b}), [ai, bi](Graph& gr, std::size_t self) {
    auto gy = gr.grad_mat(self);
    if (gr.needs_grad(ai)) gr.grad_mat(ai).noalias() += gy * gr.value(bi).mat().transpose();
    if (gr.needs_grad(bi)) gr.grad_mat(bi).noalias() += gr.value(ai).mat().transpose() * gy;
  }, "matmul");
}

// ------------------------------------------------------------------ structure

inline Var reshape(Var x, Shape shape) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  detail::require(numel(shape) == xv.size(), "reshape", xv.shape, shape);
  Tensor out(std::move(shape), xv.values);
  const std::size_t xi = x.id();
  return g.push(std::move(out), g.needs_grad(xi), [xi](Graph& gr, std::size_t self) {
    detail::accumulate(gr, xi, gr.grad_buffer(self));
  }, "reshape");
}

/// Concatenate 2-D tensors along rows (axis 0) or columns (axis 1).
inline Var concat(const std::vector<Var>& xs, int axis) {
  if (xs.empty()) throw Error("concat: no inputs");
  Graph& g = xs.front().graph();
  const Shape& s0 = xs.front().shape();
  std::size_t total = 0;
  bool need = false;
  for (const auto& v : xs) {
    const Shape& s = v.shape();
    detail::require(s.size() == 2 && s0.size() == 2, "concat", s0, s);
    detail::require(axis == 0 ? s[1] == s0[1] : s[0] == s0[0], "concat", s0, s);
    total += s[static_cast<std::size_t>(axis)];
    need = need || g.needs_grad(v.id());
  }
  Tensor out = axis == 0 ? Tensor::zeros({total, s0[1]}) : Tensor::zeros({s0[0], total});
  std::size_t off = 0;
  auto om = out.mat();
  for (const auto& v : xs) {
    const auto m = v.value().mat();
    if (axis == 0)
      om.middleRows(static_cast<Eigen::Index>(off), m.rows()) = m;
    else
      om.middleCols(static_cast<Eigen::Index>(off), m.cols()) = m;
    off += static_cast<std::size_t>(axis == 0 ? m.rows() : m.cols());
  }
  std::vector<std::size_t> ids;
  for (const auto& v : xs) ids.push_back(v.id());
  return g.push(std::move(out), need, [ids, axis](Graph& gr, std::size_t self) {
    auto gy = gr.grad_mat(self);
    Eigen::Index o = 0;
    for (std::size_t id : ids) {
      const Tensor& v = gr.value(id);
      const auto n = static_cast<Eigen::Index>(axis == 0 ? v.rows() : v.cols());
      if (gr.needs_grad(id)) {
        if (axis == 0)
          gr.grad_mat(id) += gy.middleRows(o, n);
        else
          gr.grad_mat(id) += gy.middleCols(o, n);
      }
      o += n;
    }
  }, "concat");
}

/// Columns [begin, end) of a 2-D tensor.
inline Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  if (xv.shape.size() != 2 || begin > end || end > xv.cols())
    throw Error("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) + ") on " + shape_str(xv.shape));
  Tensor out = Tensor::zeros({xv.rows(), end - begin});
  out.mat() = xv.mat().middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin));
  const std::size_t xi = x.id();
  return g.push(std::move(out), g.needs_grad(xi), [xi, begin](Graph& gr, std::size_t self) {
    auto gy = gr.grad_mat(self);
    gr.grad_mat(xi).middleCols(static_cast<Eigen::Index>(begin), gy.cols()) += gy;
  }, "slice_cols");
}

/// Rows of x picked by `idx` (repeats allowed).
inline Var gather_rows(Var x, const IndexList& idx) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  if (xv.shape.size() != 2) throw Error("gather_rows: expected 2-D input, got " + shape_str(xv.shape));
  const std::size_t c = xv.cols();
  Tensor out = Tensor::zeros({idx.size(), c});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= xv.rows()) throw Error("gather_rows: index out of range");
    std::copy_n(xv.values.begin() + static_cast<std::ptrdiff_t>(idx[i] * c), c,
                out.values.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  const std::size_t xi = x.id();
  return g.push(std::move(out), g.needs_grad(xi), [xi, idx, c](Graph& gr, std::size_t self) {
    const Buffer& gy = gr.grad_buffer(self);
    auto& gx = gr.grad_buffer(xi);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t k = 0; k < c; ++k) gx[idx[i] * c + k] += gy[i * c + k];
  }, "gather_rows");
}

// ------------------------------------------------------------------- geometry

/// For every row of x (A×3), squared distance to the nearest row of `set`
/// (B×3). Output has A entries. The argmin is held fixed in backward;
/// gradient reaches both x and the winning set point.
inline Var min_sqdist_to_set(Var x, Var set) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  const Tensor& sv = set.value();
  detail::require(xv.shape.size() == 2 && sv.shape.size() == 2 && xv.cols() == 3 && sv.cols() == 3,
                  "min_sqdist_to_set", xv.shape, sv.shape);
  if (xv.rows() == 0 || sv.rows() == 0) throw Error("min_sqdist_to_set: empty set");
  const std::size_t a = xv.rows(), b = sv.rows();
  Tensor out = Tensor::zeros({a});
  std::vector<std::size_t> arg(a);
  const double* xp = xv.values.data();
  const double* sp = sv.values.data();
  for (std::size_t i = 0; i < a; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bj = 0;
    const double x0 = xp[3 * i], x1 = xp[3 * i + 1], x2 = xp[3 * i + 2];
    for (std::size_t j = 0; j < b; ++j) {
      const double d0 = x0 - sp[3 * j], d1 = x1 - sp[3 * j + 1], d2 = x2 - sp[3 * j + 2];
      const double d = d0 * d0 + d1 * d1 + d2 * d2;
      if (d < best) {
        best = d;
        bj = j;
      }
    }
    out.values[i] = best;
    arg[i] = bj;
  }
  const std::size_t xi = x.id(), si = set.id();
  return g.push(std::move(out), detail::any_grad(g, {x, set}), [xi, si, arg](Graph& gr, std::size_t self) {
    const Buffer& gy = gr.grad_buffer(self);
    const auto& xs = gr.value(xi).values;
    const auto& ss = gr.value(si).values;
    const bool gx_on = gr.needs_grad(xi), gs_on = gr.needs_grad(si);
    for (std::size_t i = 0; i < arg.size(); ++i)
      for (int k = 0; k < 3; ++k) {
        const double d = 2.0 * gy[i] * (xs[3 * i + k] - ss[3 * arg[i] + k]);
        if (gx_on) gr.grad_buffer(xi)[3 * i + k] += d;
        if (gs_on) gr.grad_buffer(si)[3 * arg[i] + k] -= d;
      }
  }, "min_sqdist_to_set");
}

/// Rotate N×3 points about +z by the angle whose cosine and sine are the
/// single entries of `c` and `s`.
inline Var rotate_up(Var x, Var c, Var s) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  detail::require(xv.shape.size() == 2 && xv.cols() == 3, "rotate_up", xv.shape, Shape{0, 3});
  const double cv = c.value().item(), sv = s.value().item();
  Tensor out = Tensor::zeros(xv.shape);
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    const double px = xv.values[3 * i], py = xv.values[3 * i + 1];
    out.values[3 * i] = cv * px - sv * py;
    out.values[3 * i + 1] = sv * px + cv * py;
    out.values[3 * i + 2] = xv.values[3 * i + 2];
  }
  const std::size_t xi = x.id(), ci = c.id(), si = s.id();
  return g.push(std::move(out), detail::any_grad(g, {x, c, s}), [xi, ci, si](Graph& gr, std::size_t self) {
    const Buffer& gy = gr.grad_buffer(self);
    const auto& xs = gr.value(xi).values;
    const double cv2 = gr.value(ci).values[0], sv2 = gr.value(si).values[0];
    double gc = 0.0, gs = 0.0;
    const bool gx_on = gr.needs_grad(xi);
    for (std::size_t i = 0; i < xs.size() / 3; ++i) {
      const double px = xs[3 * i], py = xs[3 * i + 1];
      const double gx = gy[3 * i], gyy = gy[3 * i + 1];
      gc += gx * px + gyy * py;
      gs += -gx * py + gyy * px;
      if (gx_on) {
        auto& b = gr.grad_buffer(xi);
        b[3 * i] += cv2 * gx + sv2 * gyy;
        b[3 * i + 1] += -sv2 * gx + cv2 * gyy;
        b[3 * i + 2] += gy[3 * i + 2];
      }
    }
    if (gr.needs_grad(ci)) gr.grad_buffer(ci)[0] += gc;
    if (gr.needs_grad(si)) gr.grad_buffer(si)[0] += gs;
  }, "rotate_up");
}

/// Reflect N×3 points through the plane with normal n: x - 2 (x·n) n.
/// n is used as given (not re-normalized).
inline Var reflect(Var x, Var n) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  const Tensor& nv = n.value();
  detail::require(xv.shape.size() == 2 && xv.cols() == 3 && nv.size() == 3, "reflect", xv.shape, nv.shape);
  const Eigen::Vector3d nn(nv.values[0], nv.values[1], nv.values[2]);
  Tensor out = Tensor::zeros(xv.shape);
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    const Eigen::Vector3d p(xv.values[3 * i], xv.values[3 * i + 1], xv.values[3 * i + 2]);
    const Eigen::Vector3d r = p - 2.0 * p.dot(nn) * nn;
    for (int k = 0; k < 3; ++k) out.values[3 * i + static_cast<std::size_t>(k)] = r[k];
  }
  const std::size_t xi = x.id(), ni = n.id();
  return g.push(std::move(out), detail::any_grad(g, {x, n}), [xi, ni](Graph& gr, std::size_t self) {
    const Buffer& gy = gr.grad_buffer(self);
    const auto& xs = gr.value(xi).values;
    const auto& ns = gr.value(ni).values;
    const Eigen::Vector3d nn2(ns[0], ns[1], ns[2]);
    Eigen::Vector3d gn = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < xs.size() / 3; ++i) {
      const Eigen::Vector3d p(xs[3 * i], xs[3 * i + 1], xs[3 * i + 2]);
      const Eigen::Vector3d gv(gy[3 * i], gy[3 * i + 1], gy[3 * i + 2]);
      // y = p - 2 (p·n) n ; dy/dp = I - 2 n n^T (symmetric)
      if (gr.needs_grad(xi)) {
        const Eigen::Vector3d gp = gv - 2.0 * gv.dot(nn2) * nn2;
        for (int k = 0; k < 3; ++k) gr.grad_buffer(xi)[3 * i + static_cast<std::size_t>(k)] += gp[k];
      }
      // dy/dn = -2 (n p^T + (p·n) I)
      gn += -2.0 * (p * nn2.dot(gv) + p.dot(nn2) * gv);
    }
    if (gr.needs_grad(ni))
      for (int k = 0; k < 3; ++k) gr.grad_buffer(ni)[static_cast<std::size_t>(k)] += gn[k];
  }, "reflect");
}

// ------------------------------------------------------------- finite checks

using Builder = std::function<Var(Graph&, const std::vector<Var>& leaves)>;

/// Central-difference check of the gradient of `build`'s scalar output with
/// respect to every entry of every leaf. Returns the worst relative error,
/// with denominator max(1, |analytic|).
inline double grad_check(const Builder& build, const std::vector<Tensor>& leaves, double step = 1e-5) {
  std::vector<Tensor> analytic;
  {
    Graph g;
    std::vector<Var> vs;
    for (const auto& t : leaves) vs.push_back(g.parameter(t));
    Var loss = build(g, vs);
    g.backward(loss);
    for (const auto& v : vs) analytic.push_back(g.grad(v));
  }
  auto eval = [&](const std::vector<Tensor>& ls) {
    Graph g;
    std::vector<Var> vs;
    for (const auto& t : ls) vs.push_back(g.parameter(t));
    return build(g, vs).value().item();
  };
  double worst = 0.0;
  std::vector<Tensor> work = leaves;
  for (std::size_t l = 0; l < leaves.size(); ++l)
    for (std::size_t i = 0; i < leaves[l].size(); ++i) {
      const double orig = work[l].values[i];
      work[l].values[i] = orig + step;
      const double fp = eval(work);
      work[l].values[i] = orig - step;
      const double fm = eval(work);
      work[l].values[i] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[l].values[i];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  return worst;
}

}  // namespace symkp::diff
