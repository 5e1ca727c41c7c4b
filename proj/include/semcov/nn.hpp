#pragma once

// Parameterized building blocks shared by the encoder modules.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "semcov/autograd.hpp"

namespace semcov {

using ag::Array;
using ag::Shape;
using ag::Var;

/// Portable random source: mt19937_64 is fully specified by the standard, and
/// the transforms below avoid implementation-defined distributions so that
/// streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}
  uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  bool bernoulli(double p) { return uniform() < p; }
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }
  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return n ? next() % n : 0; }
  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<uint64_t>(last - first);
    for (uint64_t i = n; i > 1; --i) std::swap(first[i - 1], first[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

template <typename T>
struct ParamRef {
  std::string name;
  Var<T> var;
  bool trainable = true;
};

template <typename T>
using ParamList = std::vector<ParamRef<T>>;

template <typename T>
Var<T> uniform_param(Shape shape, double bound, Rng& rng) {
  Array<T> v(ag::numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Var<T>::parameter(std::move(shape), std::move(v));
}

template <typename T>
Var<T> const_param(Shape shape, T fill) {
  Array<T> v = Array<T>::Constant(ag::numel(shape), fill);
  return Var<T>::parameter(std::move(shape), std::move(v));
}

template <typename T>
struct Linear {
  Var<T> weight;  // [out, in]
  Var<T> bias;    // [out]

  Linear() = default;
  Linear(int in, int out, Rng& rng, bool with_bias = true) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = uniform_param<T>({out, in}, bound, rng);
    if (with_bias) bias = const_param<T>({out}, T(0));
  }
  int in_features() const { return weight.dim(1); }
  int out_features() const { return weight.dim(0); }
  Var<T> operator()(const Var<T>& x) const { return ag::linear(x, weight, bias); }
  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".weight", weight, true});
    if (bias.defined()) out.push_back({prefix + ".bias", bias, true});
  }
  void zero() {
    weight.mutable_value().setZero();
    if (bias.defined()) bias.mutable_value().setZero();
  }
};

template <typename T>
struct Conv2d {
  Var<T> weight;  // [out, in, k, k]
  Var<T> bias;    // [out]
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(int in, int out, int k, int stride_, Rng& rng, bool relu_gain = true)
      : stride(stride_), pad(k / 2) {
    const double fan_in = static_cast<double>(in) * k * k;
    const double bound = relu_gain ? std::sqrt(6.0 / fan_in) : 1.0 / std::sqrt(fan_in);
    weight = uniform_param<T>({out, in, k, k}, bound, rng);
    bias = const_param<T>({out}, T(0));
  }
  int out_channels() const { return weight.dim(0); }
  Var<T> operator()(const Var<T>& x) const { return ag::conv2d(x, weight, bias, stride, pad); }
  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".weight", weight, true});
    out.push_back({prefix + ".bias", bias, true});
  }
  void zero() {
    weight.mutable_value().setZero();
    bias.mutable_value().setZero();
  }
};

template <typename T>
struct LayerNorm {
  Var<T> gain, shift;
  LayerNorm() = default;
  explicit LayerNorm(int n) : gain(const_param<T>({n}, T(1))), shift(const_param<T>({n}, T(0))) {}
  Var<T> operator()(const Var<T>& x) const { return ag::layer_norm(x, gain, shift); }
  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".gain", gain, true});
    out.push_back({prefix + ".shift", shift, true});
  }
};

/// Channel normalization with learnable affine and running statistics.
template <typename T>
struct BatchNorm2d {
  Var<T> gain, shift;
  Var<T> running_mean, running_var;  // buffers, not trained

  BatchNorm2d() = default;
  explicit BatchNorm2d(int c)
      : gain(const_param<T>({c}, T(1))),
        shift(const_param<T>({c}, T(0))),
        running_mean(Var<T>::constant({c}, T(0))),
        running_var(Var<T>::constant({c}, T(1))) {}

  Var<T> operator()(const Var<T>& x, bool training) const {
    // Buffers live in shared nodes; updating them does not alter the handle.
    return ag::batch_norm2d(x, gain, shift, running_mean.node()->value, running_var.node()->value, training);
  }
  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".gain", gain, true});
    out.push_back({prefix + ".shift", shift, true});
    out.push_back({prefix + ".running_mean", running_mean, false});
    out.push_back({prefix + ".running_var", running_var, false});
  }
};

/// Two-layer perceptron with ReLU hidden activation.
template <typename T>
struct Mlp {
  Linear<T> hidden, out;
  Mlp() = default;
  Mlp(int in, int width, int out_dim, Rng& rng) : hidden(in, width, rng), out(width, out_dim, rng) {}
  Var<T> operator()(const Var<T>& x) const { return out(ag::relu(hidden(x))); }
  void collect(const std::string& prefix, ParamList<T>& o) const {
    hidden.collect(prefix + ".hidden", o);
    out.collect(prefix + ".out", o);
  }
};

/// Deep copy of all parameter values (used for checkpoints and snapshots).
template <typename T>
std::vector<Array<T>> snapshot(const ParamList<T>& params) {
  std::vector<Array<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.var.value());
  return out;
}

template <typename T>
void restore(ParamList<T>& params, const std::vector<Array<T>>& values) {
  for (size_t i = 0; i < params.size(); ++i) params[i].var.mutable_value() = values.at(i);
}

}  // namespace semcov
