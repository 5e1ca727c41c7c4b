#pragma once

// Minimal tape-free reverse-mode automatic differentiation over dense,
// row-major tensors. Every op records its inputs and a backward closure on
// the output node; `backward()` walks the graph in reverse topological order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "semcov/errors.hpp"

namespace semcov::ag {

using Shape = std::vector<int>;

template <typename T>
using Array = Eigen::Array<T, Eigen::Dynamic, 1>;
template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// RAII guard disabling graph construction (evaluation, parameter updates).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

template <typename T>
struct Node {
  Shape shape;
  Array<T> value;
  Array<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  Array<T>& ensure_grad() {
    if (grad.size() != value.size()) grad = Array<T>::Zero(value.size());
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var constant(Shape shape, Array<T> value) {
    if (numel(shape) != value.size())
      throw ConfigError("tensor value size does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return Var(std::move(n));
  }
  static Var constant(Shape shape, T fill) {
    Array<T> v = Array<T>::Constant(numel(shape), fill);
    return constant(std::move(shape), std::move(v));
  }
  static Var zeros(Shape shape) { return constant(std::move(shape), T(0)); }
  static Var scalar(T v) { return constant(Shape{1}, v); }

  /// Leaf that accumulates gradient.
  static Var parameter(Shape shape, Array<T> value) {
    Var v = constant(std::move(shape), std::move(value));
    v.node_->requires_grad = true;
    return v;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const {
    const int r = static_cast<int>(node_->shape.size());
    return node_->shape.at(i < 0 ? r + i : i);
  }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t size() const { return node_->value.size(); }
  const Array<T>& value() const { return node_->value; }
  Array<T>& mutable_value() { return node_->value; }
  const Array<T>& grad() const { return node_->ensure_grad(); }
  Array<T>& mutable_grad() { return node_->ensure_grad(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }
  T item() const { return node_->value(0); }
  void zero_grad() {
    if (node_->grad.size()) node_->grad.setZero();
  }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

  /// Value copy detached from any graph.
  Var detach() const { return constant(node_->shape, node_->value); }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <typename T>
Var<T> make_result(Shape shape, Array<T> value, std::initializer_list<Var<T>> inputs,
                   std::function<void(Node<T>&)> fn) {
  Var<T> out = Var<T>::constant(std::move(shape), std::move(value));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto* n = out.node();
  n->requires_grad = true;
  for (const auto& in : inputs) n->inputs.push_back(in.ptr());
  n->backward_fn = std::move(fn);
  return out;
}

template <typename T>
Array<T>* grad_of(Node<T>& self, size_t i) {
  auto& in = self.inputs[i];
  return in->requires_grad ? &in->ensure_grad() : nullptr;
}

}  // namespace detail

/// Reverse pass from a scalar root. Gradients accumulate on leaves.
template <typename T>
void backward(const Var<T>& root) {
  if (root.size() != 1) throw ArgumentError("backward() requires a scalar root");
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->inputs.size()) {
      Node<T>* child = n->inputs[idx++].get();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad()(0) += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->grad.size()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Broadcasting helpers (numpy rules, right-aligned).

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    const int da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const int db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ConfigError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

/// For each flat index of `out`, the flat index of the broadcast operand `in`.
inline std::vector<int64_t> broadcast_index(const Shape& out, const Shape& in) {
  const size_t r = out.size();
  std::vector<int64_t> in_stride(r, 0);
  int64_t s = 1;
  for (size_t k = 0; k < in.size(); ++k) {
    const size_t i = in.size() - 1 - k;
    const size_t o = r - 1 - k;
    in_stride[o] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  const int64_t n = numel(out);
  std::vector<int64_t> idx(n);
  std::vector<int> counter(r, 0);
  int64_t cur = 0;
  for (int64_t f = 0; f < n; ++f) {
    idx[f] = cur;
    for (size_t k = r; k-- > 0;) {
      if (++counter[k] < out[k]) {
        cur += in_stride[k];
        break;
      }
      cur -= in_stride[k] * (out[k] - 1);
      counter[k] = 0;
    }
  }
  return idx;
}

namespace detail {

enum class BinOp { Add, Sub, Mul, Div };

template <typename T>
Var<T> binary(const Var<T>& a, const Var<T>& b, BinOp op) {
  const Shape out_shape = a.shape() == b.shape() ? a.shape() : broadcast_shape(a.shape(), b.shape());
  const int64_t n = numel(out_shape);
  const bool a_full = a.size() == n;
  const bool b_full = b.size() == n;
  std::vector<int64_t> ia, ib;
  if (!a_full) ia = broadcast_index(out_shape, a.shape());
  if (!b_full) ib = broadcast_index(out_shape, b.shape());

  Array<T> av, bv;
  if (a_full) {
    av = a.value();
  } else {
    av.resize(n);
    for (int64_t i = 0; i < n; ++i) av(i) = a.value()(ia[i]);
  }
  if (b_full) {
    bv = b.value();
  } else {
    bv.resize(n);
    for (int64_t i = 0; i < n; ++i) bv(i) = b.value()(ib[i]);
  }
  Array<T> out;
  switch (op) {
    case BinOp::Add: out = av + bv; break;
    case BinOp::Sub: out = av - bv; break;
    case BinOp::Mul: out = av * bv; break;
    case BinOp::Div: out = av / bv; break;
  }
  const bool keep_a = op == BinOp::Mul || op == BinOp::Div;
  const bool keep_b = op == BinOp::Mul || op == BinOp::Div;
  Array<T> out_copy = op == BinOp::Div ? out : Array<T>();
  return make_result<T>(
      out_shape, std::move(out), {a, b},
      [op, n, a_full, b_full, ia = std::move(ia), ib = std::move(ib),
       av = keep_a ? std::move(av) : Array<T>(), bv = keep_b ? std::move(bv) : Array<T>(),
       out_copy = std::move(out_copy)](Node<T>& self) {
        const Array<T>& g = self.grad;
        auto scatter = [&](Array<T>* dst, const Array<T>& contrib, bool full,
                           const std::vector<int64_t>& index) {
          if (!dst) return;
          if (full) {
            *dst += contrib;
          } else {
            for (int64_t i = 0; i < n; ++i) (*dst)(index[i]) += contrib(i);
          }
        };
        Array<T>* ga = grad_of(self, 0);
        Array<T>* gb = grad_of(self, 1);
        switch (op) {
          case BinOp::Add:
            scatter(ga, g, a_full, ia);
            scatter(gb, g, b_full, ib);
            break;
          case BinOp::Sub:
            scatter(ga, g, a_full, ia);
            if (gb) scatter(gb, Array<T>(-g), b_full, ib);
            break;
          case BinOp::Mul:
            if (ga) scatter(ga, Array<T>(g * bv), a_full, ia);
            if (gb) scatter(gb, Array<T>(g * av), b_full, ib);
            break;
          case BinOp::Div:
            if (ga) scatter(ga, Array<T>(g / bv), a_full, ia);
            if (gb) scatter(gb, Array<T>(-g * out_copy / bv), b_full, ib);
            break;
        }
      });
}

}  // namespace detail

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) {
  return detail::binary(a, b, detail::BinOp::Add);
}
template <typename T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) {
  return detail::binary(a, b, detail::BinOp::Sub);
}
template <typename T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) {
  return detail::binary(a, b, detail::BinOp::Mul);
}
template <typename T>
Var<T> operator/(const Var<T>& a, const Var<T>& b) {
  return detail::binary(a, b, detail::BinOp::Div);
}

/// y = scale * x + shift
template <typename T>
Var<T> affine(const Var<T>& x, T scale, T shift) {
  Array<T> out = x.value() * scale + shift;
  return detail::make_result<T>(x.shape(), std::move(out), {x}, [scale](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0)) *g += self.grad * scale;
  });
}
template <typename T>
Var<T> operator*(const Var<T>& x, T s) {
  return affine(x, s, T(0));
}
template <typename T>
Var<T> operator*(T s, const Var<T>& x) {
  return affine(x, s, T(0));
}
template <typename T>
Var<T> operator+(const Var<T>& x, T s) {
  return affine(x, T(1), s);
}
template <typename T>
Var<T> operator-(const Var<T>& x) {
  return affine(x, T(-1), T(0));
}
/// s - x
template <typename T>
Var<T> rsub(T s, const Var<T>& x) {
  return affine(x, T(-1), s);
}

// ---------------------------------------------------------------------------
// Unary elementwise.

namespace detail {
/// `dfn(x, y)` returns dy/dx elementwise.
template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& x, F fn, DF dfn) {
  Array<T> y = fn(x.value());
  Array<T> xv = x.requires_grad() ? x.value() : Array<T>();
  Array<T> yv = x.requires_grad() ? y : Array<T>();
  return make_result<T>(x.shape(), std::move(y), {x},
                        [xv = std::move(xv), yv = std::move(yv), dfn](Node<T>& self) {
                          if (auto* g = grad_of(self, 0)) *g += self.grad * dfn(xv, yv);
                        });
}
}  // namespace detail

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary(
      x, [](const Array<T>& v) -> Array<T> { return T(1) / (T(1) + (-v).exp()); },
      [](const Array<T>&, const Array<T>& y) -> Array<T> { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return detail::unary(
      x, [](const Array<T>& v) -> Array<T> { return v.tanh(); },
      [](const Array<T>&, const Array<T>& y) -> Array<T> { return T(1) - y * y; });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return detail::unary(
      x, [](const Array<T>& v) -> Array<T> { return v.max(T(0)); },
      [](const Array<T>& v, const Array<T>&) -> Array<T> { return (v > T(0)).template cast<T>(); });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  return detail::unary(
      x, [](const Array<T>& v) -> Array<T> { return v.exp(); },
      [](const Array<T>&, const Array<T>& y) -> Array<T> { return y; });
}

template <typename T>
Var<T> log(const Var<T>& x) {
  return detail::unary(
      x, [](const Array<T>& v) -> Array<T> { return v.log(); },
      [](const Array<T>& v, const Array<T>&) -> Array<T> { return v.inverse(); });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return detail::unary(
      x, [](const Array<T>& v) -> Array<T> { return v.square(); },
      [](const Array<T>& v, const Array<T>&) -> Array<T> { return T(2) * v; });
}

/// Clamp with zero gradient outside [lo, hi].
template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  return detail::unary(
      x, [lo, hi](const Array<T>& v) -> Array<T> { return v.max(lo).min(hi); },
      [lo, hi](const Array<T>& v, const Array<T>&) -> Array<T> {
        return ((v >= lo) && (v <= hi)).template cast<T>();
      });
}

// ---------------------------------------------------------------------------
// Shape manipulation and reductions.

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ConfigError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  return detail::make_result<T>(std::move(shape), x.value(), {x}, [](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0)) *g += self.grad;
  });
}

/// Permutes axes of a tensor of rank <= 4.
template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r || r > 4) throw ConfigError("permute: bad axes");
  Shape in = x.shape();
  while (in.size() < 4) in.insert(in.begin(), 1);
  std::vector<int> p(4);
  const int off = 4 - r;
  for (int i = 0; i < off; ++i) p[i] = i;
  for (int i = 0; i < r; ++i) p[off + i] = perm[i] + off;
  int64_t stride[4];
  stride[3] = 1;
  for (int i = 2; i >= 0; --i) stride[i] = stride[i + 1] * in[i + 1];
  Shape out4(4);
  for (int i = 0; i < 4; ++i) out4[i] = in[p[i]];
  std::vector<int64_t> src(numel(out4));
  int64_t f = 0;
  for (int a = 0; a < out4[0]; ++a)
    for (int b = 0; b < out4[1]; ++b)
      for (int c = 0; c < out4[2]; ++c)
        for (int d = 0; d < out4[3]; ++d) {
          const int idx[4] = {a, b, c, d};
          int64_t s = 0;
          for (int k = 0; k < 4; ++k) s += idx[k] * stride[p[k]];
          src[f++] = s;
        }
  Array<T> out(src.size());
  for (size_t i = 0; i < src.size(); ++i) out(i) = x.value()(src[i]);
  Shape out_shape(out4.begin() + off, out4.end());
  return detail::make_result<T>(std::move(out_shape), std::move(out), {x},
                                [src = std::move(src)](Node<T>& self) {
                                  if (auto* g = detail::grad_of(self, 0))
                                    for (size_t i = 0; i < src.size(); ++i) (*g)(src[i]) += self.grad(i);
                                });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  Array<T> out(1);
  out(0) = x.value().sum();
  return detail::make_result<T>(Shape{1}, std::move(out), {x}, [](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0)) *g += self.grad(0);
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return sum(x) * (T(1) / static_cast<T>(x.size()));
}

/// Sum over one axis; the axis is removed from the shape.
template <typename T>
Var<T> sum_axis(const Var<T>& x, int axis) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  const int n = x.dim(axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + axis);
  if (out_shape.empty()) out_shape = {1};
  Array<T> out = Array<T>::Zero(outer * inner);
  const auto& v = x.value();
  for (int64_t o = 0; o < outer; ++o)
    for (int k = 0; k < n; ++k)
      out.segment(o * inner, inner) += v.segment((o * n + k) * inner, inner);
  return detail::make_result<T>(std::move(out_shape), std::move(out), {x},
                                [outer, inner, n](Node<T>& self) {
                                  if (auto* g = detail::grad_of(self, 0))
                                    for (int64_t o = 0; o < outer; ++o)
                                      for (int k = 0; k < n; ++k)
                                        g->segment((o * n + k) * inner, inner) +=
                                            self.grad.segment(o * inner, inner);
                                });
}

template <typename T>
Var<T> mean_axis(const Var<T>& x, int axis) {
  const int n = x.dim(axis);
  return sum_axis(x, axis) * (T(1) / static_cast<T>(n));
}

/// Spatial average over the trailing two axes of [B, C, H, W] → [B, C].
template <typename T>
Var<T> spatial_mean(const Var<T>& x) {
  const int b = x.dim(0), c = x.dim(1);
  const int hw = x.dim(2) * x.dim(3);
  return mean_axis(reshape(x, Shape{b, c, hw}), 2);
}

// ---------------------------------------------------------------------------
// Linear algebra.

/// y = x Wᵀ + b over the last axis of x. W is [out, in], b is [out] or undefined.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const int in = w.dim(1), out = w.dim(0);
  if (x.dim(-1) != in)
    throw ConfigError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  const int64_t m = x.size() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out;
  Array<T> y(m * out);
  {
    ConstMatMap<T> X(x.value().data(), m, in);
    ConstMatMap<T> W(w.value().data(), out, in);
    MatMap<T> Y(y.data(), m, out);
    Y.noalias() = X * W.transpose();
    if (b.defined()) Y.rowwise() += b.value().matrix().transpose();
  }
  const bool has_b = b.defined();
  auto fn = [m, in, out, has_b](Node<T>& self) {
    ConstMatMap<T> G(self.grad.data(), m, out);
    if (auto* gx = detail::grad_of(self, 0)) {
      ConstMatMap<T> W(self.inputs[1]->value.data(), out, in);
      MatMap<T>(gx->data(), m, in).noalias() += G * W;
    }
    if (auto* gw = detail::grad_of(self, 1)) {
      ConstMatMap<T> X(self.inputs[0]->value.data(), m, in);
      MatMap<T>(gw->data(), out, in).noalias() += G.transpose() * X;
    }
    if (has_b)
      if (auto* gb = detail::grad_of(self, 2)) *gb += G.colwise().sum().transpose().array();
  };
  if (has_b) return detail::make_result<T>(std::move(out_shape), std::move(y), {x, w, b}, std::move(fn));
  return detail::make_result<T>(std::move(out_shape), std::move(y), {x, w}, std::move(fn));
}

/// Batched matrix product over a leading batch axis: [N, M, K] x [N, K, P].
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) throw ConfigError("bmm: bad shapes");
  const int n = a.dim(0);
  const int ar = a.dim(1), ac = a.dim(2), br = b.dim(1), bc = b.dim(2);
  const int m = trans_a ? ac : ar, k = trans_a ? ar : ac;
  const int k2 = trans_b ? bc : br, p = trans_b ? br : bc;
  if (k != k2) throw ConfigError("bmm: inner dims differ");
  Array<T> y(static_cast<int64_t>(n) * m * p);
  for (int i = 0; i < n; ++i) {
    ConstMatMap<T> A(a.value().data() + static_cast<int64_t>(i) * ar * ac, ar, ac);
    ConstMatMap<T> B(b.value().data() + static_cast<int64_t>(i) * br * bc, br, bc);
    MatMap<T> Y(y.data() + static_cast<int64_t>(i) * m * p, m, p);
    if (trans_a && trans_b) Y.noalias() = A.transpose() * B.transpose();
    else if (trans_a) Y.noalias() = A.transpose() * B;
    else if (trans_b) Y.noalias() = A * B.transpose();
    else Y.noalias() = A * B;
  }
  return detail::make_result<T>(
      Shape{n, m, p}, std::move(y), {a, b}, [=](Node<T>& self) {
        auto* ga = detail::grad_of(self, 0);
        auto* gb = detail::grad_of(self, 1);
        for (int i = 0; i < n; ++i) {
          ConstMatMap<T> G(self.grad.data() + static_cast<int64_t>(i) * m * p, m, p);
          ConstMatMap<T> A(self.inputs[0]->value.data() + static_cast<int64_t>(i) * ar * ac, ar, ac);
          ConstMatMap<T> B(self.inputs[1]->value.data() + static_cast<int64_t>(i) * br * bc, br, bc);
          if (ga) {
            MatMap<T> GA(ga->data() + static_cast<int64_t>(i) * ar * ac, ar, ac);
            // op(A) = m x k ; dop(A) = G op(B)ᵀ
            if (!trans_a && !trans_b) GA.noalias() += G * B.transpose();
            else if (!trans_a && trans_b) GA.noalias() += G * B;
            else if (trans_a && !trans_b) GA.noalias() += B * G.transpose();
            else GA.noalias() += B.transpose() * G.transpose();
          }
          if (gb) {
            MatMap<T> GB(gb->data() + static_cast<int64_t>(i) * br * bc, br, bc);
            if (!trans_a && !trans_b) GB.noalias() += A.transpose() * G;
            else if (trans_a && !trans_b) GB.noalias() += A * G;
            else if (!trans_a && trans_b) GB.noalias() += G.transpose() * A;
            else GB.noalias() += G.transpose() * A.transpose();
          }
        }
      });
}

/// 2-D product of a constant matrix with a variable: [R, C] x [C, ...].
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.rank() != 2) throw ConfigError("matmul: lhs must be rank 2");
  const int cols = b.rank() == 1 ? 1 : static_cast<int>(b.size() / b.dim(0));
  auto a3 = reshape(a, Shape{1, a.dim(0), a.dim(1)});
  auto b3 = reshape(b, Shape{1, b.dim(0), cols});
  auto y = bmm(a3, b3);
  if (b.rank() == 1) return reshape(y, Shape{a.dim(0)});
  return reshape(y, Shape{a.dim(0), cols});
}

// ---------------------------------------------------------------------------
// Convolution (NCHW, square kernels, zero padding).

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4) throw ConfigError("conv2d expects rank-4 input and weight");
  const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != Cin)
    throw ConfigError("conv2d: input channels " + std::to_string(Cin) + " vs weight " + shape_str(w.shape()));
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  const int64_t HWo = static_cast<int64_t>(Ho) * Wo;
  const int64_t ncol = static_cast<int64_t>(B) * HWo;
  const int64_t krow = static_cast<int64_t>(Cin) * kh * kw;

  // cols[(ci,ki,kj), (b, oy, ox)]
  RowMat<T> cols = RowMat<T>::Zero(krow, ncol);
  const T* xv = x.value().data();
  for (int ci = 0; ci < Cin; ++ci)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        T* row = cols.data() + ((static_cast<int64_t>(ci) * kh + ki) * kw + kj) * ncol;
        for (int bb = 0; bb < B; ++bb) {
          const T* plane = xv + (static_cast<int64_t>(bb) * Cin + ci) * H * W;
          T* dst = row + bb * HWo;
          for (int oy = 0; oy < Ho; ++oy) {
            const int iy = oy * stride - pad + ki;
            if (iy < 0 || iy >= H) continue;
            for (int ox = 0; ox < Wo; ++ox) {
              const int ix = ox * stride - pad + kj;
              if (ix >= 0 && ix < W) dst[oy * Wo + ox] = plane[iy * W + ix];
            }
          }
        }
      }
  ConstMatMap<T> Wm(w.value().data(), Cout, krow);
  RowMat<T> out_mat = Wm * cols;
  Array<T> y(static_cast<int64_t>(B) * Cout * HWo);
  for (int bb = 0; bb < B; ++bb)
    for (int co = 0; co < Cout; ++co) {
      const T bias = b.defined() ? b.value()(co) : T(0);
      Eigen::Map<Array<T>>(y.data() + (static_cast<int64_t>(bb) * Cout + co) * HWo, HWo) =
          out_mat.row(co).segment(bb * HWo, HWo).array().transpose() + bias;
    }
  const bool has_b = b.defined();
  const bool need_cols = w.requires_grad();
  auto fn = [=, cols = need_cols ? std::move(cols) : RowMat<T>()](Node<T>& self) {
    RowMat<T> G(Cout, ncol);
    for (int bb = 0; bb < B; ++bb)
      for (int co = 0; co < Cout; ++co)
        G.row(co).segment(bb * HWo, HWo) =
            Eigen::Map<const Array<T>>(self.grad.data() + (static_cast<int64_t>(bb) * Cout + co) * HWo, HWo)
                .matrix()
                .transpose();
    if (auto* gw = detail::grad_of(self, 1)) MatMap<T>(gw->data(), Cout, krow).noalias() += G * cols.transpose();
    if (has_b)
      if (auto* gb = detail::grad_of(self, 2)) *gb += G.rowwise().sum().array();
    if (auto* gx = detail::grad_of(self, 0)) {
      ConstMatMap<T> Wmat(self.inputs[1]->value.data(), Cout, krow);
      RowMat<T> dcols = Wmat.transpose() * G;
      T* gxv = gx->data();
      for (int ci = 0; ci < Cin; ++ci)
        for (int ki = 0; ki < kh; ++ki)
          for (int kj = 0; kj < kw; ++kj) {
            const T* row = dcols.data() + ((static_cast<int64_t>(ci) * kh + ki) * kw + kj) * ncol;
            for (int bb = 0; bb < B; ++bb) {
              T* plane = gxv + (static_cast<int64_t>(bb) * Cin + ci) * H * W;
              const T* src = row + bb * HWo;
              for (int oy = 0; oy < Ho; ++oy) {
                const int iy = oy * stride - pad + ki;
                if (iy < 0 || iy >= H) continue;
                for (int ox = 0; ox < Wo; ++ox) {
                  const int ix = ox * stride - pad + kj;
                  if (ix >= 0 && ix < W) plane[iy * W + ix] += src[oy * Wo + ox];
                }
              }
            }
          }
    }
  };
  Shape out_shape{B, Cout, Ho, Wo};
  if (has_b) return detail::make_result<T>(std::move(out_shape), std::move(y), {x, w, b}, std::move(fn));
  return detail::make_result<T>(std::move(out_shape), std::move(y), {x, w}, std::move(fn));
}

// ---------------------------------------------------------------------------
// Normalizations and softmax.

/// Softmax over the last axis.
template <typename T>
Var<T> softmax(const Var<T>& x) {
  const int n = x.dim(-1);
  const int64_t rows = x.size() / n;
  Array<T> y(x.size());
  for (int64_t r = 0; r < rows; ++r) {
    auto seg = x.value().segment(r * n, n);
    Array<T> e = (seg - seg.maxCoeff()).exp();
    y.segment(r * n, n) = e / e.sum();
  }
  Array<T> yc = y;
  return detail::make_result<T>(x.shape(), std::move(y), {x}, [n, rows, yc = std::move(yc)](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0))
      for (int64_t r = 0; r < rows; ++r) {
        auto ys = yc.segment(r * n, n);
        auto gs = self.grad.segment(r * n, n);
        const T dot = (ys * gs).sum();
        g->segment(r * n, n) += ys * (gs - dot);
      }
  });
}

/// Log-softmax over the last axis.
template <typename T>
Var<T> log_softmax(const Var<T>& x) {
  const int n = x.dim(-1);
  const int64_t rows = x.size() / n;
  Array<T> y(x.size());
  Array<T> sm(x.size());
  for (int64_t r = 0; r < rows; ++r) {
    auto seg = x.value().segment(r * n, n);
    const T mx = seg.maxCoeff();
    Array<T> e = (seg - mx).exp();
    const T s = e.sum();
    y.segment(r * n, n) = seg - mx - std::log(s);
    sm.segment(r * n, n) = e / s;
  }
  return detail::make_result<T>(x.shape(), std::move(y), {x}, [n, rows, sm = std::move(sm)](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0))
      for (int64_t r = 0; r < rows; ++r) {
        auto gs = self.grad.segment(r * n, n);
        g->segment(r * n, n) += gs - sm.segment(r * n, n) * gs.sum();
      }
  });
}

/// Layer normalization over the last axis with affine gain/shift.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& shift, T eps = T(1e-5)) {
  const int n = x.dim(-1);
  const int64_t rows = x.size() / n;
  Array<T> xhat(x.size());
  Array<T> inv_std(rows);
  for (int64_t r = 0; r < rows; ++r) {
    auto seg = x.value().segment(r * n, n);
    const T mu = seg.mean();
    const T var = (seg - mu).square().mean();
    inv_std(r) = T(1) / std::sqrt(var + eps);
    xhat.segment(r * n, n) = (seg - mu) * inv_std(r);
  }
  Array<T> y(x.size());
  for (int64_t r = 0; r < rows; ++r)
    y.segment(r * n, n) = xhat.segment(r * n, n) * gain.value() + shift.value();
  return detail::make_result<T>(
      x.shape(), std::move(y), {x, gain, shift},
      [n, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        const auto& gv = self.inputs[1]->value;
        auto* gx = detail::grad_of(self, 0);
        auto* gg = detail::grad_of(self, 1);
        auto* gs = detail::grad_of(self, 2);
        for (int64_t r = 0; r < rows; ++r) {
          auto dy = self.grad.segment(r * n, n);
          auto xh = xhat.segment(r * n, n);
          if (gg) *gg += dy * xh;
          if (gs) *gs += dy;
          if (gx) {
            Array<T> dxh = dy * gv;
            gx->segment(r * n, n) +=
                inv_std(r) * (dxh - dxh.mean() - xh * (dxh * xh).mean());
          }
        }
      });
}

/// Per-channel normalization of [B, C, H, W] with statistics over (B, H, W).
/// In training mode uses batch statistics and updates the running buffers; for
/// B = 1 this reduces to instance normalization. In eval mode uses the buffers.
template <typename T>
Var<T> batch_norm2d(const Var<T>& x, const Var<T>& gain, const Var<T>& shift, Array<T>& running_mean,
                    Array<T>& running_var, bool training, T momentum = T(0.1), T eps = T(1e-5)) {
  const int B = x.dim(0), C = x.dim(1);
  const int64_t hw = x.size() / (static_cast<int64_t>(B) * C);
  const int64_t cnt = B * hw;
  Array<T> mu(C), inv_std(C);
  const auto& v = x.value();
  for (int c = 0; c < C; ++c) {
    if (training) {
      T s = 0;
      for (int b = 0; b < B; ++b) s += v.segment((static_cast<int64_t>(b) * C + c) * hw, hw).sum();
      const T m = s / cnt;
      T ss = 0;
      for (int b = 0; b < B; ++b) ss += (v.segment((static_cast<int64_t>(b) * C + c) * hw, hw) - m).square().sum();
      const T var = ss / cnt;
      mu(c) = m;
      inv_std(c) = T(1) / std::sqrt(var + eps);
      running_mean(c) = (T(1) - momentum) * running_mean(c) + momentum * m;
      const T unbiased = cnt > 1 ? var * cnt / (cnt - 1) : var;
      running_var(c) = (T(1) - momentum) * running_var(c) + momentum * unbiased;
    } else {
      mu(c) = running_mean(c);
      inv_std(c) = T(1) / std::sqrt(running_var(c) + eps);
    }
  }
  Array<T> xhat(x.size()), y(x.size());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const int64_t off = (static_cast<int64_t>(b) * C + c) * hw;
      xhat.segment(off, hw) = (v.segment(off, hw) - mu(c)) * inv_std(c);
      y.segment(off, hw) = xhat.segment(off, hw) * gain.value()(c) + shift.value()(c);
    }
  return detail::make_result<T>(
      x.shape(), std::move(y), {x, gain, shift},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        const auto& gv = self.inputs[1]->value;
        auto* gx = detail::grad_of(self, 0);
        auto* gg = detail::grad_of(self, 1);
        auto* gs = detail::grad_of(self, 2);
        for (int c = 0; c < C; ++c) {
          T sum_dy = 0, sum_dy_xh = 0;
          for (int b = 0; b < B; ++b) {
            const int64_t off = (static_cast<int64_t>(b) * C + c) * hw;
            sum_dy += self.grad.segment(off, hw).sum();
            sum_dy_xh += (self.grad.segment(off, hw) * xhat.segment(off, hw)).sum();
          }
          if (gg) (*gg)(c) += sum_dy_xh;
          if (gs) (*gs)(c) += sum_dy;
          if (!gx) continue;
          const T gc = gv(c);
          for (int b = 0; b < B; ++b) {
            const int64_t off = (static_cast<int64_t>(b) * C + c) * hw;
            if (training) {
              gx->segment(off, hw) += gc * inv_std(c) / T(cnt) *
                                      (T(cnt) * self.grad.segment(off, hw) - sum_dy -
                                       xhat.segment(off, hw) * sum_dy_xh);
            } else {
              gx->segment(off, hw) += self.grad.segment(off, hw) * gc * inv_std(c);
            }
          }
        }
      });
}

/// Per-(sample, channel) min–max normalization of [B, K, H, W] to [0, 1]:
/// (x − min) / (max − min + eps). Constant channels map to 0.
template <typename T>
Var<T> minmax_normalize(const Var<T>& x, T eps = T(1e-6)) {
  const int64_t planes = static_cast<int64_t>(x.dim(0)) * x.dim(1);
  const int64_t hw = x.size() / planes;
  Array<T> y(x.size());
  std::vector<int64_t> amin(planes), amax(planes);
  Array<T> range(planes), lo(planes);
  for (int64_t p = 0; p < planes; ++p) {
    auto seg = x.value().segment(p * hw, hw);
    Eigen::Index imin, imax;
    const T mn = seg.minCoeff(&imin);
    const T mx = seg.maxCoeff(&imax);
    amin[p] = p * hw + imin;
    amax[p] = p * hw + imax;
    lo(p) = mn;
    range(p) = mx - mn + eps;
    y.segment(p * hw, hw) = (seg - mn) / range(p);
  }
  return detail::make_result<T>(
      x.shape(), std::move(y), {x},
      [=, amin = std::move(amin), amax = std::move(amax), range = std::move(range), lo = std::move(lo)](Node<T>& self) {
        auto* g = detail::grad_of(self, 0);
        if (!g) return;
        const auto& xv = self.inputs[0]->value;
        for (int64_t p = 0; p < planes; ++p) {
          auto dy = self.grad.segment(p * hw, hw);
          const T r = range(p);
          const T s_dy = dy.sum();
          const T s_dy_x = (dy * (xv.segment(p * hw, hw) - lo(p))).sum();
          g->segment(p * hw, hw) += dy / r;
          (*g)(amin[p]) += -s_dy / r + s_dy_x / (r * r);
          (*g)(amax[p]) += -s_dy_x / (r * r);
        }
      });
}

/// Unit-normalizes rows over the last axis: x / sqrt(|x|² + eps).
template <typename T>
Var<T> l2_normalize(const Var<T>& x, T eps = T(1e-12)) {
  const int n = x.dim(-1);
  const int64_t rows = x.size() / n;
  Array<T> y(x.size()), norms(rows);
  for (int64_t r = 0; r < rows; ++r) {
    norms(r) = std::sqrt(x.value().segment(r * n, n).square().sum() + eps);
    y.segment(r * n, n) = x.value().segment(r * n, n) / norms(r);
  }
  Array<T> yc = y;
  return detail::make_result<T>(
      x.shape(), std::move(y), {x}, [n, rows, yc = std::move(yc), norms = std::move(norms)](Node<T>& self) {
        if (auto* g = detail::grad_of(self, 0))
          for (int64_t r = 0; r < rows; ++r) {
            auto ys = yc.segment(r * n, n);
            auto dy = self.grad.segment(r * n, n);
            g->segment(r * n, n) += (dy - ys * (ys * dy).sum()) / norms(r);
          }
      });
}

/// Gathers x[i, index[i]] from a [N, C] tensor → [N].
template <typename T>
Var<T> pick(const Var<T>& x, const std::vector<int>& index) {
  const int n = x.dim(0), c = x.dim(1);
  if (static_cast<int>(index.size()) != n) throw ArgumentError("pick: index length mismatch");
  Array<T> y(n);
  for (int i = 0; i < n; ++i) {
    if (index[i] < 0 || index[i] >= c) throw ArgumentError("pick: index out of range");
    y(i) = x.value()(static_cast<int64_t>(i) * c + index[i]);
  }
  return detail::make_result<T>(Shape{n}, std::move(y), {x}, [index, c](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0))
      for (size_t i = 0; i < index.size(); ++i) (*g)(static_cast<int64_t>(i) * c + index[i]) += self.grad(i);
  });
}

/// Absolute sample Pearson correlation between a constant vector `xs` and a
/// variable vector `ys`; differentiable in `ys`. Returns a constant 0 when
/// either side has (numerically) zero variance.
template <typename T>
Var<T> abs_pearson(const Array<T>& xs, const Var<T>& ys, bool* degenerate = nullptr) {
  const int64_t n = xs.size();
  if (ys.size() != n || n < 2) throw ArgumentError("abs_pearson: need two vectors of equal length >= 2");
  const Array<T> xc = xs - xs.mean();
  const Array<T> yc = ys.value() - ys.value().mean();
  const T sxx = xc.square().sum();
  const T syy = yc.square().sum();
  const T tiny = std::numeric_limits<T>::epsilon() * std::numeric_limits<T>::epsilon();
  if (degenerate) *degenerate = false;
  if (!(sxx > tiny) || !(syy > tiny)) {
    if (degenerate) *degenerate = true;
    return Var<T>::scalar(T(0));
  }
  const T sx = std::sqrt(sxx), sy = std::sqrt(syy);
  const T r = (xc * yc).sum() / (sx * sy);
  Array<T> out(1);
  out(0) = std::abs(r);
  const T sign = r >= 0 ? T(1) : T(-1);
  // d r / d y_j = xc_j / (sx sy) − r yc_j / syy
  Array<T> dr = xc / (sx * sy) - r * yc / syy;
  return detail::make_result<T>(Shape{1}, std::move(out), {ys}, [dr = std::move(dr), sign](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0)) *g += self.grad(0) * sign * dr;
  });
}

}  // namespace semcov::ag
