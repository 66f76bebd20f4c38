// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "genreg/core.hpp"
#include "genreg/geometry.hpp"

namespace genreg {

using TensorShape = std::vector<Eigen::Index>;

inline std::string shape_string(const TensorShape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline Eigen::Index shape_numel(const TensorShape& s) {
  Eigen::Index n = 1;
  for (const Eigen::Index d : s) n *= d;
  return n;
}

namespace ad_detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace ad_detail

/// RAII guard disabling graph construction on the current thread; forward
/// passes under the guard compute values only.
struct NoGradGuard {
  NoGradGuard() : prev_(ad_detail::grad_mode()) { ad_detail::grad_mode() = false; }
  ~NoGradGuard() { ad_detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename S>
struct TensorNode {
  TensorShape shape;
  std::vector<S> values;
  std::vector<S> grad;  // allocated on first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  Eigen::Index numel() const { return Eigen::Index(values.size()); }

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), S(0));
  }
};

/// Dense multi-dimensional array participating in a reverse-mode graph.
/// Values are stored flat in row-major order; the graph is built eagerly
/// during forward evaluation and freed when the last Tensor handle drops.
template <typename S>
class Tensor {
 public:
  using Node = TensorNode<S>;

  Tensor() = default;

  static Tensor leaf(TensorShape shape, std::vector<S> values, bool requires_grad = false) {
    if (Eigen::Index(values.size()) != shape_numel(shape))
      throw ShapeError("Tensor: values length " + std::to_string(values.size()) +
                       " does not match shape " + shape_string(shape));
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor zeros(TensorShape shape, bool requires_grad = false) {
    std::vector<S> v(std::size_t(shape_numel(shape)), S(0));
    return leaf(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor full(TensorShape shape, S value, bool requires_grad = false) {
    std::vector<S> v(std::size_t(shape_numel(shape)), value);
    return leaf(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor scalar(S value, bool requires_grad = false) {
    return leaf({}, {value}, requires_grad);
  }

  static Tensor from_points(const PointMatrix<S>& m, bool requires_grad = false) {
    std::vector<S> v(std::size_t(m.size()));
    Eigen::Map<PointMatrix<S>>(v.data(), m.rows(), 3) = m;
    return leaf({m.rows(), 3}, std::move(v), requires_grad);
  }

  static Tensor from_matrix(const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& m,
                            bool requires_grad = false) {
    std::vector<S> v(std::size_t(m.size()));
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(v.data(), m.rows(), m.cols()) =
        m;
    return leaf({m.rows(), m.cols()}, std::move(v), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const TensorShape& shape() const { return node_->shape; }
  Eigen::Index rank() const { return Eigen::Index(node_->shape.size()); }
  Eigen::Index numel() const { return node_->numel(); }
  Eigen::Index dim(Eigen::Index i) const { return node_->shape[std::size_t(i)]; }
  bool requires_grad() const { return node_->requires_grad; }
  const std::vector<S>& values() const { return node_->values; }

  /// Direct value access for parameter updates; leaves only.
  std::vector<S>& mutable_values() {
    if (node_->backward_fn) throw InvalidArgument("mutable_values: not a leaf tensor");
    return node_->values;
  }

  /// Gradient copy; zeros when backward never reached this tensor.
  std::vector<S> grad() const {
    if (node_->grad.size() == node_->values.size()) return node_->grad;
    return std::vector<S>(node_->values.size(), S(0));
  }

  void reset_grad() { node_->grad.clear(); }

  S value() const {
    if (numel() != 1) throw InvalidArgument("Tensor::value: tensor is not scalar, shape " + shape_string(shape()));
    return node_->values[0];
  }

  PointMatrix<S> to_points() const {
    if (rank() != 2 || dim(1) != 3) throw ShapeError("to_points: shape " + shape_string(shape()) + " is not [N,3]");
    return Eigen::Map<const PointMatrix<S>>(node_->values.data(), dim(0), 3);
  }

  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> to_matrix() const {
    if (rank() != 2) throw ShapeError("to_matrix: tensor rank != 2");
    return Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        node_->values.data(), dim(0), dim(1));
  }

  std::shared_ptr<Node> node() const { return node_; }

  /// Reverse pass from a scalar tensor: populates grad on every
  /// requires-grad tensor reachable in the graph below this one.
  void backward() const {
    if (numel() != 1) throw InvalidArgument("backward: loss must be scalar, shape " + shape_string(shape()));
    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [node, next_parent] = stack.back();
      if (next_parent < node->parents.size()) {
        Node* p = node->parents[next_parent].get();
        ++next_parent;
        if (p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        topo.push_back(node);
        stack.pop_back();
      }
    }
    // intermediate grads are transient per pass; only leaves accumulate
    for (Node* node : topo)
      if (node->backward_fn) node->grad.clear();
    node_->ensure_grad();
    node_->grad[0] += S(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      Node* node = *it;
      if (node->backward_fn && node->grad.size() == node->values.size()) node->backward_fn(*node);
    }
  }

  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

namespace ad_detail {

template <typename S>
std::shared_ptr<TensorNode<S>> make_result(TensorShape shape, std::vector<S> values, const char* op,
                                           std::vector<std::shared_ptr<TensorNode<S>>> parents,
                                           std::function<void(TensorNode<S>&)> backward) {
  auto node = std::make_shared<TensorNode<S>>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->op = op;
  bool needs = false;
  if (grad_mode()) {
    for (const auto& p : parents) needs |= p->requires_grad;
  }
  node->requires_grad = needs;
  if (needs) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward);
  }
  return node;
}

template <typename S>
void accumulate(TensorNode<S>& target, const std::vector<S>& delta) {
  target.ensure_grad();
  Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>(target.grad.data(), Eigen::Index(delta.size())) +=
      Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>(delta.data(), Eigen::Index(delta.size()));
}

/// Right-aligned numpy-style broadcast of two shapes.
inline TensorShape broadcast_shape(const TensorShape& a, const TensorShape& b) {
  TensorShape out(std::max(a.size(), b.size()));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Eigen::Index da = i < out.size() - a.size() ? 1 : a[i - (out.size() - a.size())];
    const Eigen::Index db = i < out.size() - b.size() ? 1 : b[i - (out.size() - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError("broadcast: incompatible shapes " + shape_string(a) + " and " + shape_string(b));
    out[i] = std::max(da, db);
  }
  return out;
}

/// Row-major strides with zeros on broadcast dimensions, right-aligned into
/// a rank-`out_rank` frame.
inline std::vector<Eigen::Index> broadcast_strides(const TensorShape& shape, std::size_t out_rank) {
  std::vector<Eigen::Index> strides(out_rank, 0);
  Eigen::Index stride = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    const std::size_t axis = shape.size() - 1 - i;
    const std::size_t out_axis = out_rank - 1 - i;
    strides[out_axis] = (shape[axis] == 1) ? 0 : stride;
    stride *= shape[axis];
  }
  return strides;
}

inline std::vector<Eigen::Index> dense_strides(const TensorShape& shape) {
  std::vector<Eigen::Index> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

}  // namespace ad_detail

// ---------------------------------------------------------------------------
// elementwise binary ops with broadcasting

namespace ad_detail {

template <typename S, typename Fwd, typename BwdA, typename BwdB>
Tensor<S> binary_op(const Tensor<S>& a, const Tensor<S>& b, const char* name, Fwd fwd, BwdA bwd_a,
                    BwdB bwd_b) {
  const TensorShape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t rank = out_shape.size();
  const Eigen::Index n = shape_numel(out_shape);
  const auto& va = a.values();
  const auto& vb = b.values();
  std::vector<S> values(static_cast<std::size_t>(n));

  // hot layouts get flat loops: identical shapes, and the trailing-axis
  // bias pattern [..., C] (+) [C]
  const bool same = a.shape() == b.shape();
  const bool bias = !same && b.rank() >= 1 && Eigen::Index(vb.size()) == b.dim(b.rank() - 1) &&
                    a.rank() >= 1 && a.dim(a.rank() - 1) == Eigen::Index(vb.size()) &&
                    out_shape == a.shape();
  if (same) {
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = fwd(va[i], vb[i]);
  } else if (bias) {
    const std::size_t c = vb.size();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = fwd(va[i], vb[i % c]);
  } else {
    const auto sa = broadcast_strides(a.shape(), rank);
    const auto sb = broadcast_strides(b.shape(), rank);
    std::vector<Eigen::Index> idx(rank, 0);
    Eigen::Index off_a = 0, off_b = 0;
    for (Eigen::Index lin = 0; lin < n; ++lin) {
      values[std::size_t(lin)] = fwd(va[std::size_t(off_a)], vb[std::size_t(off_b)]);
      for (std::size_t ax = rank; ax-- > 0;) {
        ++idx[ax];
        off_a += sa[ax];
        off_b += sb[ax];
        if (idx[ax] < out_shape[ax]) break;
        off_a -= sa[ax] * out_shape[ax];
        off_b -= sb[ax] * out_shape[ax];
        idx[ax] = 0;
      }
    }
  }

  auto an = a.node();
  auto bn = b.node();
  auto backward = [an, bn, out_shape, rank, bwd_a, bwd_b, same, bias](TensorNode<S>& self) {
    const Eigen::Index n2 = shape_numel(out_shape);
    std::vector<S> ga, gb;
    if (an->requires_grad) ga.assign(an->values.size(), S(0));
    if (bn->requires_grad) gb.assign(bn->values.size(), S(0));
    if (same) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const S g = self.grad[i];
        if (an->requires_grad) ga[i] += g * bwd_a(an->values[i], bn->values[i]);
        if (bn->requires_grad) gb[i] += g * bwd_b(an->values[i], bn->values[i]);
      }
    } else if (bias) {
      const std::size_t c = bn->values.size();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const S g = self.grad[i];
        if (an->requires_grad) ga[i] += g * bwd_a(an->values[i], bn->values[i % c]);
        if (bn->requires_grad) gb[i % c] += g * bwd_b(an->values[i], bn->values[i % c]);
      }
    } else {
      const auto sa = broadcast_strides(an->shape, rank);
      const auto sb = broadcast_strides(bn->shape, rank);
      std::vector<Eigen::Index> idx2(rank, 0);
      Eigen::Index off_a2 = 0, off_b2 = 0;
      for (Eigen::Index lin = 0; lin < n2; ++lin) {
        const S g = self.grad[std::size_t(lin)];
        const S xa = an->values[std::size_t(off_a2)];
        const S xb = bn->values[std::size_t(off_b2)];
        if (an->requires_grad) ga[std::size_t(off_a2)] += g * bwd_a(xa, xb);
        if (bn->requires_grad) gb[std::size_t(off_b2)] += g * bwd_b(xa, xb);
        for (std::size_t ax = rank; ax-- > 0;) {
          ++idx2[ax];
          off_a2 += sa[ax];
          off_b2 += sb[ax];
          if (idx2[ax] < out_shape[ax]) break;
          off_a2 -= sa[ax] * out_shape[ax];
          off_b2 -= sb[ax] * out_shape[ax];
          idx2[ax] = 0;
        }
      }
    }
    if (an->requires_grad) accumulate(*an, ga);
    if (bn->requires_grad) accumulate(*bn, gb);
  };
  return Tensor<S>(make_result<S>(out_shape, std::move(values), name, {an, bn}, backward));
}

}  // namespace ad_detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return ad_detail::binary_op(
      a, b, "add", [](S x, S y) { return x + y; }, [](S, S) { return S(1); },
      [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return ad_detail::binary_op(
      a, b, "sub", [](S x, S y) { return x - y; }, [](S, S) { return S(1); },
      [](S, S) { return S(-1); });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return ad_detail::binary_op(
      a, b, "mul", [](S x, S y) { return x * y; }, [](S, S y) { return y; },
      [](S x, S) { return x; });
}

// ---------------------------------------------------------------------------
// elementwise unary ops

namespace ad_detail {

template <typename S, typename Fwd, typename Bwd>
Tensor<S> unary_op(const Tensor<S>& x, const char* name, Fwd fwd, Bwd bwd) {
  std::vector<S> values(x.values().size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = fwd(x.values()[i]);
  auto xn = x.node();
  auto backward = [xn, bwd](TensorNode<S>& self) {
    std::vector<S> gx(xn->values.size());
    for (std::size_t i = 0; i < gx.size(); ++i)
      gx[i] = self.grad[i] * bwd(xn->values[i], self.values[i]);
    accumulate(*xn, gx);
  };
  return Tensor<S>(make_result<S>(x.shape(), std::move(values), name, {xn}, backward));
}

}  // namespace ad_detail

template <typename S>
Tensor<S> leaky_relu(const Tensor<S>& x, S slope = S(0.01)) {
  return ad_detail::unary_op(
      x, "leaky_relu", [slope](S v) { return v >= S(0) ? v : slope * v; },
      [slope](S v, S) { return v >= S(0) ? S(1) : slope; });
}

/// tanh-approximation GELU with the fixed 0.044715 cubic constant.
template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  const S k = S(0.7978845608028654);  // sqrt(2/pi)
  const S c = S(0.044715);
  return ad_detail::unary_op(
      x, "gelu",
      [k, c](S v) { return S(0.5) * v * (S(1) + std::tanh(k * (v + c * v * v * v))); },
      [k, c](S v, S) {
        const S inner = k * (v + c * v * v * v);
        const S t = std::tanh(inner);
        const S sech2 = S(1) - t * t;
        return S(0.5) * (S(1) + t) + S(0.5) * v * sech2 * k * (S(1) + S(3) * c * v * v);
      });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return ad_detail::unary_op(
      x, "sigmoid",
      [](S v) { return v >= S(0) ? S(1) / (S(1) + std::exp(-v)) : std::exp(v) / (S(1) + std::exp(v)); },
      [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> log(const Tensor<S>& x) {
  return ad_detail::unary_op(
      x, "log", [](S v) { return std::log(v); }, [](S v, S) { return S(1) / v; });
}

/// Square root with a guarded derivative: zero inputs pass zero gradient
/// (subgradient choice for coincident-point distances).
template <typename S>
Tensor<S> sqrt(const Tensor<S>& x) {
  return ad_detail::unary_op(
      x, "sqrt", [](S v) { return std::sqrt(v); },
      [](S v, S y) { return v < S(1e-24) ? S(0) : S(0.5) / y; });
}

template <typename S>
Tensor<S> abs(const Tensor<S>& x) {
  return ad_detail::unary_op(
      x, "abs", [](S v) { return std::abs(v); },
      [](S v, S) { return v > S(0) ? S(1) : (v < S(0) ? S(-1) : S(0)); });
}

template <typename S>
Tensor<S> sin(const Tensor<S>& x) {
  return ad_detail::unary_op(
      x, "sin", [](S v) { return std::sin(v); }, [](S v, S) { return std::cos(v); });
}

template <typename S>
Tensor<S> cos(const Tensor<S>& x) {
  return ad_detail::unary_op(
      x, "cos", [](S v) { return std::cos(v); }, [](S v, S) { return -std::sin(v); });
}

template <typename S>
Tensor<S> clamp(const Tensor<S>& x, S lo, S hi) {
  return ad_detail::unary_op(
      x, "clamp", [lo, hi](S v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](S v, S) { return (v >= lo && v <= hi) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& x, S c) {
  return ad_detail::unary_op(
      x, "mul_scalar", [c](S v) { return c * v; }, [c](S, S) { return c; });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, S c) {
  return ad_detail::unary_op(
      x, "add_scalar", [c](S v) { return v + c; }, [](S, S) { return S(1); });
}

// ---------------------------------------------------------------------------
// matmul / affine

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapC = Eigen::Map<const RowMat>;
  using Map = Eigen::Map<RowMat>;
  if (a.rank() < 2 || b.rank() < 2 || a.rank() != b.rank() || a.rank() > 3)
    throw ShapeError("matmul: unsupported ranks " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const Eigen::Index rank = a.rank();
  const Eigen::Index batch = rank == 3 ? a.dim(0) : 1;
  if (rank == 3 && b.dim(0) != batch)
    throw ShapeError("matmul: batch mismatch " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const Eigen::Index m = a.dim(rank - 2), k = a.dim(rank - 1);
  const Eigen::Index k2 = b.dim(rank - 2), n = b.dim(rank - 1);
  if (k != k2)
    throw ShapeError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  TensorShape out_shape = rank == 3 ? TensorShape{batch, m, n} : TensorShape{m, n};
  std::vector<S> values(static_cast<std::size_t>(batch * m * n));
  for (Eigen::Index t = 0; t < batch; ++t) {
    MapC ma(a.values().data() + t * m * k, m, k);
    MapC mb(b.values().data() + t * k * n, k, n);
    Map(values.data() + t * m * n, m, n).noalias() = ma * mb;
  }
  auto an = a.node();
  auto bn = b.node();
  auto backward = [an, bn, batch, m, k, n](TensorNode<S>& self) {
    std::vector<S> ga, gb;
    if (an->requires_grad) ga.assign(an->values.size(), S(0));
    if (bn->requires_grad) gb.assign(bn->values.size(), S(0));
    for (Eigen::Index t = 0; t < batch; ++t) {
      MapC g(self.grad.data() + t * m * n, m, n);
      MapC ma(an->values.data() + t * m * k, m, k);
      MapC mb(bn->values.data() + t * k * n, k, n);
      if (an->requires_grad) Map(ga.data() + t * m * k, m, k).noalias() += g * mb.transpose();
      if (bn->requires_grad) Map(gb.data() + t * k * n, k, n).noalias() += ma.transpose() * g;
    }
    if (an->requires_grad) ad_detail::accumulate(*an, ga);
    if (bn->requires_grad) ad_detail::accumulate(*bn, gb);
  };
  return Tensor<S>(ad_detail::make_result<S>(std::move(out_shape), std::move(values), "matmul", {an, bn}, backward));
}

// ---------------------------------------------------------------------------
// structural ops

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, TensorShape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw ShapeError("reshape: element count mismatch " + shape_string(x.shape()) + " -> " + shape_string(new_shape));
  auto xn = x.node();
  auto backward = [xn](TensorNode<S>& self) { ad_detail::accumulate(*xn, self.grad); };
  return Tensor<S>(ad_detail::make_result<S>(std::move(new_shape), x.values(), "reshape", {xn}, backward));
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x, Eigen::Index ax1, Eigen::Index ax2) {
  const Eigen::Index r = x.rank();
  if (ax1 < 0 || ax2 < 0 || ax1 >= r || ax2 >= r)
    throw ShapeError("transpose: axis out of range for shape " + shape_string(x.shape()));
  TensorShape out_shape = x.shape();
  std::swap(out_shape[std::size_t(ax1)], out_shape[std::size_t(ax2)]);
  const auto in_strides = ad_detail::dense_strides(x.shape());
  auto perm_strides = in_strides;
  std::swap(perm_strides[std::size_t(ax1)], perm_strides[std::size_t(ax2)]);
  const Eigen::Index n = x.numel();
  const std::size_t rank = out_shape.size();
  std::vector<S> values(static_cast<std::size_t>(n));
  std::vector<Eigen::Index> idx(rank, 0);
  Eigen::Index src = 0;
  for (Eigen::Index lin = 0; lin < n; ++lin) {
    values[std::size_t(lin)] = x.values()[std::size_t(src)];
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      src += perm_strides[ax];
      if (idx[ax] < out_shape[ax]) break;
      src -= perm_strides[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
  auto xn = x.node();
  auto backward = [xn, perm_strides, out_shape, rank](TensorNode<S>& self) {
    std::vector<S> gx(xn->values.size(), S(0));
    std::vector<Eigen::Index> idx2(rank, 0);
    Eigen::Index src = 0;
    const Eigen::Index n2 = Eigen::Index(self.values.size());
    for (Eigen::Index lin = 0; lin < n2; ++lin) {
      gx[std::size_t(src)] += self.grad[std::size_t(lin)];
      for (std::size_t ax = rank; ax-- > 0;) {
        ++idx2[ax];
        src += perm_strides[ax];
        if (idx2[ax] < out_shape[ax]) break;
        src -= perm_strides[ax] * out_shape[ax];
        idx2[ax] = 0;
      }
    }
    ad_detail::accumulate(*xn, gx);
  };
  return Tensor<S>(ad_detail::make_result<S>(std::move(out_shape), std::move(values), "transpose", {xn}, backward));
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& xs, Eigen::Index axis) {
  if (xs.empty()) throw InvalidArgument("concat: no inputs");
  const Eigen::Index rank = xs[0].rank();
  if (axis < 0 || axis >= rank) throw ShapeError("concat: axis out of range");
  TensorShape out_shape = xs[0].shape();
  Eigen::Index total = 0;
  for (const auto& x : xs) {
    if (x.rank() != rank) throw ShapeError("concat: rank mismatch " + shape_string(x.shape()));
    for (Eigen::Index d = 0; d < rank; ++d) {
      if (d != axis && x.dim(d) != out_shape[std::size_t(d)])
        throw ShapeError("concat: shape mismatch " + shape_string(x.shape()) + " vs " + shape_string(xs[0].shape()));
    }
    total += x.dim(axis);
  }
  out_shape[std::size_t(axis)] = total;

  Eigen::Index outer = 1, inner = 1;
  for (Eigen::Index d = 0; d < axis; ++d) outer *= out_shape[std::size_t(d)];
  for (Eigen::Index d = axis + 1; d < rank; ++d) inner *= out_shape[std::size_t(d)];

  std::vector<S> values(static_cast<std::size_t>(outer * total * inner));
  Eigen::Index offset = 0;
  for (const auto& x : xs) {
    const Eigen::Index len = x.dim(axis);
    for (Eigen::Index o = 0; o < outer; ++o) {
      std::copy_n(x.values().data() + o * len * inner, std::size_t(len * inner),
                  values.data() + (o * total + offset) * inner);
    }
    offset += len;
  }

  std::vector<std::shared_ptr<TensorNode<S>>> parents;
  std::vector<Eigen::Index> lens;
  for (const auto& x : xs) {
    parents.push_back(x.node());
    lens.push_back(x.dim(axis));
  }
  auto backward = [parents, lens, outer, inner, total](TensorNode<S>& self) {
    Eigen::Index offset2 = 0;
    for (std::size_t pi = 0; pi < parents.size(); ++pi) {
      const Eigen::Index len = lens[pi];
      if (parents[pi]->requires_grad) {
        std::vector<S> gx(parents[pi]->values.size(), S(0));
        for (Eigen::Index o = 0; o < outer; ++o) {
          const S* src = self.grad.data() + (o * total + offset2) * inner;
          S* dst = gx.data() + o * len * inner;
          for (Eigen::Index i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
        ad_detail::accumulate(*parents[pi], gx);
      }
      offset2 += len;
    }
  };
  return Tensor<S>(ad_detail::make_result<S>(std::move(out_shape), std::move(values), "concat", std::move(parents), backward));
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, Eigen::Index axis, Eigen::Index start, Eigen::Index len) {
  const Eigen::Index rank = x.rank();
  if (axis < 0 || axis >= rank) throw ShapeError("slice: axis out of range");
  if (start < 0 || len < 0 || start + len > x.dim(axis))
    throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") out of bounds for shape " + shape_string(x.shape()));
  TensorShape out_shape = x.shape();
  out_shape[std::size_t(axis)] = len;
  Eigen::Index outer = 1, inner = 1;
  for (Eigen::Index d = 0; d < axis; ++d) outer *= x.dim(d);
  for (Eigen::Index d = axis + 1; d < rank; ++d) inner *= x.dim(d);
  const Eigen::Index full = x.dim(axis);
  std::vector<S> values(static_cast<std::size_t>(outer * len * inner));
  for (Eigen::Index o = 0; o < outer; ++o)
    std::copy_n(x.values().data() + (o * full + start) * inner, std::size_t(len * inner),
                values.data() + o * len * inner);
  auto xn = x.node();
  auto backward = [xn, outer, inner, full, start, len](TensorNode<S>& self) {
    std::vector<S> gx(xn->values.size(), S(0));
    for (Eigen::Index o = 0; o < outer; ++o) {
      const S* src = self.grad.data() + o * len * inner;
      S* dst = gx.data() + (o * full + start) * inner;
      for (Eigen::Index i = 0; i < len * inner; ++i) dst[i] += src[i];
    }
    ad_detail::accumulate(*xn, gx);
  };
  return Tensor<S>(ad_detail::make_result<S>(std::move(out_shape), std::move(values), "slice", {xn}, backward));
}

/// Gather rows along axis 0; gradient scatter-adds into the source rows.
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<std::size_t>& indices) {
  if (x.rank() < 1) throw ShapeError("gather_rows: scalar input");
  const Eigen::Index rows = x.dim(0);
  const Eigen::Index inner = x.numel() / rows;
  for (const std::size_t idx : indices)
    if (Eigen::Index(idx) >= rows) throw ShapeError("gather_rows: index out of range");
  TensorShape out_shape = x.shape();
  out_shape[0] = Eigen::Index(indices.size());
  std::vector<S> values(indices.size() * std::size_t(inner));
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(x.values().data() + Eigen::Index(indices[r]) * inner, std::size_t(inner),
                values.data() + Eigen::Index(r) * inner);
  auto xn = x.node();
  auto backward = [xn, indices, inner](TensorNode<S>& self) {
    std::vector<S> gx(xn->values.size(), S(0));
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const S* src = self.grad.data() + Eigen::Index(r) * inner;
      S* dst = gx.data() + Eigen::Index(indices[r]) * inner;
      for (Eigen::Index i = 0; i < inner; ++i) dst[i] += src[i];
    }
    ad_detail::accumulate(*xn, gx);
  };
  return Tensor<S>(ad_detail::make_result<S>(std::move(out_shape), std::move(values), "gather_rows", {xn}, backward));
}

// ---------------------------------------------------------------------------
// reductions

namespace ad_detail {

inline void reduction_extents(const TensorShape& shape, Eigen::Index axis, Eigen::Index& outer,
                              Eigen::Index& len, Eigen::Index& inner, TensorShape& out_shape) {
  const Eigen::Index rank = Eigen::Index(shape.size());
  if (axis < 0 || axis >= rank) throw ShapeError("reduce: axis out of range for shape " + shape_string(shape));
  outer = 1;
  inner = 1;
  for (Eigen::Index d = 0; d < axis; ++d) outer *= shape[std::size_t(d)];
  for (Eigen::Index d = axis + 1; d < rank; ++d) inner *= shape[std::size_t(d)];
  len = shape[std::size_t(axis)];
  out_shape.clear();
  for (Eigen::Index d = 0; d < rank; ++d)
    if (d != axis) out_shape.push_back(shape[std::size_t(d)]);
}

}  // namespace ad_detail

template <typename S>
Tensor<S> reduce_sum(const Tensor<S>& x, Eigen::Index axis) {
  Eigen::Index outer, len, inner;
  TensorShape out_shape;
  ad_detail::reduction_extents(x.shape(), axis, outer, len, inner, out_shape);
  std::vector<S> values(static_cast<std::size_t>(outer * inner), S(0));
  for (Eigen::Index o = 0; o < outer; ++o)
    for (Eigen::Index l = 0; l < len; ++l)
      for (Eigen::Index i = 0; i < inner; ++i)
        values[std::size_t(o * inner + i)] += x.values()[std::size_t((o * len + l) * inner + i)];
  auto xn = x.node();
  auto backward = [xn, outer, len, inner](TensorNode<S>& self) {
    std::vector<S> gx(xn->values.size());
    for (Eigen::Index o = 0; o < outer; ++o)
      for (Eigen::Index l = 0; l < len; ++l)
        for (Eigen::Index i = 0; i < inner; ++i)
          gx[std::size_t((o * len + l) * inner + i)] = self.grad[std::size_t(o * inner + i)];
    ad_detail::accumulate(*xn, gx);
  };
  return Tensor<S>(ad_detail::make_result<S>(std::move(out_shape), std::move(values), "reduce_sum", {xn}, backward));
}

template <typename S>
Tensor<S> reduce_mean(const Tensor<S>& x, Eigen::Index axis) {
  const S inv = S(1) / S(x.dim(axis));
  return mul_scalar(reduce_sum(x, axis), inv);
}

/// Sum of all elements, scalar result.
template <typename S>
Tensor<S> reduce_sum_all(const Tensor<S>& x) {
  S total = S(0);
  for (const S v : x.values()) total += v;
  auto xn = x.node();
  auto backward = [xn](TensorNode<S>& self) {
    std::vector<S> gx(xn->values.size(), self.grad[0]);
    ad_detail::accumulate(*xn, gx);
  };
  return Tensor<S>(ad_detail::make_result<S>({}, {total}, "reduce_sum_all", {xn}, backward));
}

template <typename S>
Tensor<S> reduce_mean_all(const Tensor<S>& x) {
  return mul_scalar(reduce_sum_all(x), S(1) / S(x.numel()));
}

/// Max along one axis. Gradient routes to the argmax position; ties resolve
/// to the lowest index so training stays deterministic.
template <typename S>
Tensor<S> reduce_max(const Tensor<S>& x, Eigen::Index axis) {
  Eigen::Index outer, len, inner;
  TensorShape out_shape;
  ad_detail::reduction_extents(x.shape(), axis, outer, len, inner, out_shape);
  std::vector<S> values(static_cast<std::size_t>(outer * inner));
  auto argmax = std::make_shared<std::vector<Eigen::Index>>(std::size_t(outer * inner));
  for (Eigen::Index o = 0; o < outer; ++o)
    for (Eigen::Index i = 0; i < inner; ++i) {
      S best = x.values()[std::size_t(o * len * inner + i)];
      Eigen::Index best_l = 0;
      for (Eigen::Index l = 1; l < len; ++l) {
        const S v = x.values()[std::size_t((o * len + l) * inner + i)];
        if (v > best) {
          best = v;
          best_l = l;
        }
      }
      values[std::size_t(o * inner + i)] = best;
      (*argmax)[std::size_t(o * inner + i)] = best_l;
    }
  auto xn = x.node();
  auto backward = [xn, argmax, outer, len, inner](TensorNode<S>& self) {
    std::vector<S> gx(xn->values.size(), S(0));
    for (Eigen::Index o = 0; o < outer; ++o)
      for (Eigen::Index i = 0; i < inner; ++i) {
        const Eigen::Index l = (*argmax)[std::size_t(o * inner + i)];
        gx[std::size_t((o * len + l) * inner + i)] += self.grad[std::size_t(o * inner + i)];
      }
    ad_detail::accumulate(*xn, gx);
  };
  return Tensor<S>(ad_detail::make_result<S>(std::move(out_shape), std::move(values), "reduce_max", {xn}, backward));
}

// ---------------------------------------------------------------------------
// fully connected layer

/// affine(x, W, b) = x W + b for x [.., in], W [in, out], b [out]. Also the
/// kernel-size-1 1D convolution used by the decoder.
template <typename S>
Tensor<S> affine(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  if (w.rank() != 2) throw ShapeError("affine: W must be rank 2, got " + shape_string(w.shape()));
  if (b.rank() != 1 || b.dim(0) != w.dim(1))
    throw ShapeError("affine: bias shape " + shape_string(b.shape()) + " does not match W " + shape_string(w.shape()));
  if (x.rank() < 1 || x.dim(x.rank() - 1) != w.dim(0))
    throw ShapeError("affine: input shape " + shape_string(x.shape()) + " does not match W " + shape_string(w.shape()));
  Tensor<S> x2 = x;
  TensorShape orig = x.shape();
  if (x.rank() != 2) x2 = reshape(x, {x.numel() / w.dim(0), w.dim(0)});
  Tensor<S> y = add(matmul(x2, w), b);
  if (x.rank() != 2) {
    TensorShape out = orig;
    out.back() = w.dim(1);
    y = reshape(y, out);
  }
  return y;
}

}  // namespace genreg
