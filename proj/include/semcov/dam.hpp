#pragma once

// Descriptor Attention Modulation: token-driven channel FiLM followed by an
// uncertainty-tempered spatial gate derived from the semantic map.

#include <string>
#include <utility>
#include <vector>

#include "semcov/errors.hpp"
#include "semcov/nn.hpp"
#include "semcov/sdm.hpp"

namespace semcov {

template <typename T>
struct DamParams {
  int C_f = 0, K = 0, D = 0;
  bool gate_per_channel = false;  // ψ: K → C_f instead of K → 1

  BatchNorm2d<T> norm;
  Mlp<T> gamma, beta;  // token → per-channel scale / bias
  Conv2d<T> psi_gate;  // 1×1
  Var<T> s, b;         // uncertainty scale and bias, shape [1]
  Conv2d<T> phi;       // 3×3 refinement

  DamParams() = default;
  DamParams(int C_f_, int K_, int D_, Rng& rng, bool per_channel = false)
      : C_f(C_f_), K(K_), D(D_), gate_per_channel(per_channel) {
    norm = BatchNorm2d<T>(C_f);
    gamma = Mlp<T>(D, D, C_f, rng);
    beta = Mlp<T>(D, D, C_f, rng);
    // Start FiLM near identity.
    gamma.out.weight.mutable_value() *= T(0.1);
    beta.out.weight.mutable_value() *= T(0.1);
    psi_gate = Conv2d<T>(K, per_channel ? C_f : 1, 1, 1, rng, false);
    s = const_param<T>({1}, T(4));
    b = const_param<T>({1}, T(0));
    phi = Conv2d<T>(C_f, C_f, 3, 1, rng);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    norm.collect(prefix + ".norm", out);
    gamma.collect(prefix + ".gamma", out);
    beta.collect(prefix + ".beta", out);
    psi_gate.collect(prefix + ".psi_gate", out);
    out.push_back({prefix + ".s", s, true});
    out.push_back({prefix + ".b", b, true});
    phi.collect(prefix + ".phi", out);
  }
};

/// F_c = Normalize(F) ⊙ (1 + tanh γ(t)) + β(t); t is [B, D].
template <typename T>
Var<T> channel_film(const Var<T>& F, const Var<T>& t, const DamParams<T>& prm, bool training) {
  if (F.rank() != 4 || F.dim(1) != prm.C_f) throw ConfigError("channel_film: feature shape " + ag::shape_str(F.shape()));
  if (t.rank() != 2 || t.dim(1) != prm.D || t.dim(0) != F.dim(0))
    throw ConfigError("channel_film: token shape " + ag::shape_str(t.shape()));
  const int B = F.dim(0);
  auto normed = prm.norm(F, training);
  auto scale = ag::reshape(ag::tanh(prm.gamma(t)) + T(1), Shape{B, prm.C_f, 1, 1});
  auto shift = ag::reshape(prm.beta(t), Shape{B, prm.C_f, 1, 1});
  return normed * scale + shift;
}

struct Uncertainty {
  std::vector<double> u;
  double u_bar = 0.0;
};

/// u_k = 4 p_k (1 − p_k) and its mean.
inline Uncertainty descriptor_uncertainty(const std::vector<double>& p) {
  Uncertainty out;
  out.u.reserve(p.size());
  for (double v : p) out.u.push_back(4.0 * v * (1.0 - v));
  double s = 0;
  for (double v : out.u) s += v;
  out.u_bar = p.empty() ? 0.0 : s / static_cast<double>(p.size());
  return out;
}

/// Differentiable batch form: p [B, K] → ū [B].
template <typename T>
Var<T> mean_uncertainty(const Var<T>& p) {
  auto u = (p * ag::rsub(T(1), p)) * T(4);
  return ag::mean_axis(u, 1);
}

/// α = σ(s (1 − ū) + b), [B].
template <typename T>
Var<T> uncertainty_alpha(const Var<T>& u_bar, const DamParams<T>& prm) {
  return ag::sigmoid(prm.s * ag::rsub(T(1), u_bar) + prm.b);
}

/// G_s = σ(ψ(M)), [B, 1 or C_f, H, W].
template <typename T>
Var<T> spatial_gate(const SemanticMap<T>& M, const DamParams<T>& prm) {
  if (M.values.rank() != 4 || M.values.dim(1) != prm.K)
    throw ConfigError("spatial_gate: semantic map shape " + ag::shape_str(M.values.shape()));
  return ag::sigmoid(prm.psi_gate(M.values));
}

/// Pointwise factor 0.5 + α G_s, bounded in (0.5, 1.5).
template <typename T>
Var<T> modulation_factor(const SemanticMap<T>& M, const Var<T>& u_bar, const DamParams<T>& prm) {
  const int B = M.values.dim(0);
  auto alpha = ag::reshape(uncertainty_alpha(u_bar, prm), Shape{B, 1, 1, 1});
  return alpha * spatial_gate(M, prm) + T(0.5);
}

/// F_s = φ(F_c ⊙ (0.5 + α G_s)).
template <typename T>
Var<T> spatial_modulate(const Var<T>& Fc, const SemanticMap<T>& M, const Var<T>& u_bar, const DamParams<T>& prm) {
  if (Fc.rank() != 4 || M.values.rank() != 4 || Fc.dim(2) != M.values.dim(2) || Fc.dim(3) != M.values.dim(3) ||
      Fc.dim(0) != M.values.dim(0))
    throw ConfigError("spatial_modulate: feature/map shapes differ");
  return ag::relu(prm.phi(Fc * modulation_factor(M, u_bar, prm)));
}

/// Full DAM: channel FiLM then spatial modulation.
template <typename T>
Var<T> dam_forward(const Var<T>& F, const Var<T>& t, const SemanticMap<T>& M, const Var<T>& u_bar,
                   const DamParams<T>& prm, bool training) {
  return spatial_modulate(channel_film(F, t, prm, training), M, u_bar, prm);
}

}  // namespace semcov
