#pragma once

// Semantic Descriptor Map: descriptor-driven priors, feature-driven maps and
// their fusion into a K-channel spatial map normalized per channel.

#include <string>

#include "semcov/errors.hpp"
#include "semcov/nn.hpp"

namespace semcov {

enum class SdmVariant { DescriptorOnly, FeatureOnly, HybridAdd, HybridMul, HybridGated };

inline const char* to_string(SdmVariant v) {
  switch (v) {
    case SdmVariant::DescriptorOnly: return "descriptor_only";
    case SdmVariant::FeatureOnly: return "feature_only";
    case SdmVariant::HybridAdd: return "hybrid_add";
    case SdmVariant::HybridMul: return "hybrid_mul";
    case SdmVariant::HybridGated: return "hybrid_gated";
  }
  return "?";
}

inline SdmVariant sdm_variant_from_string(const std::string& s) {
  for (auto v : {SdmVariant::DescriptorOnly, SdmVariant::FeatureOnly, SdmVariant::HybridAdd, SdmVariant::HybridMul,
                 SdmVariant::HybridGated})
    if (s == to_string(v)) return v;
  throw ConfigError("unknown sdm variant \"" + s + "\"");
}

inline constexpr SdmVariant kAllSdmVariants[] = {SdmVariant::DescriptorOnly, SdmVariant::FeatureOnly,
                                                 SdmVariant::HybridAdd, SdmVariant::HybridMul,
                                                 SdmVariant::HybridGated};

template <typename T>
struct SemanticMap {
  Var<T> values;  // [B, K, H, W]
  bool normalized = false;
};

template <typename T>
struct SdmParams {
  int K = 0, C_f = 0, H = 0, W = 0, D = 0;
  SdmVariant variant = SdmVariant::HybridGated;

  Linear<T> psi_hidden;  // K -> D
  Linear<T> psi_out;     // D -> K·H·W
  Conv2d<T> phi_d1, phi_d2;
  Conv2d<T> phi_f1, phi_f2;
  Var<T> W_d, W_s;  // [K, K] channel gates
  Mlp<T> gate;      // g(p) pre-activation, K -> D -> K

  SdmParams() = default;
  SdmParams(int K_, int C_f_, int H_, int W_, int D_, SdmVariant v, Rng& rng)
      : K(K_), C_f(C_f_), H(H_), W(W_), D(D_), variant(v) {
    psi_hidden = Linear<T>(K, D, rng);
    psi_out = Linear<T>(D, K * H * W, rng);
    phi_d1 = Conv2d<T>(K, K, 3, 1, rng);
    phi_d2 = Conv2d<T>(K, K, 3, 1, rng, false);
    phi_f1 = Conv2d<T>(C_f, K, 3, 1, rng);
    phi_f2 = Conv2d<T>(K, K, 3, 1, rng, false);
    const double bound = 1.0 / std::sqrt(static_cast<double>(K));
    W_d = uniform_param<T>({K, K}, bound, rng);
    W_s = uniform_param<T>({K, K}, bound, rng);
    gate = Mlp<T>(K, D, K, rng);
  }

  bool uses_descriptor_path() const { return variant != SdmVariant::FeatureOnly; }
  bool uses_feature_path() const { return variant != SdmVariant::DescriptorOnly; }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    psi_hidden.collect(prefix + ".psi_hidden", out);
    psi_out.collect(prefix + ".psi_out", out);
    phi_d1.collect(prefix + ".phi_d1", out);
    phi_d2.collect(prefix + ".phi_d2", out);
    phi_f1.collect(prefix + ".phi_f1", out);
    phi_f2.collect(prefix + ".phi_f2", out);
    out.push_back({prefix + ".W_d", W_d, true});
    out.push_back({prefix + ".W_s", W_s, true});
    gate.collect(prefix + ".gate", out);
  }
};

namespace detail {
/// [B, K] → [B, K, 1, 1] so a per-channel vector broadcasts spatially.
template <typename T>
Var<T> as_channel_gate(const Var<T>& g) {
  return ag::reshape(g, Shape{g.dim(0), g.dim(1), 1, 1});
}
}  // namespace detail

/// M⁽ᵈ⁾ = φ_d(ψ_d(p)) ⊙ σ(W_d p); image independent. `p` is [B, K].
template <typename T>
SemanticMap<T> descriptor_map(const Var<T>& p, const SdmParams<T>& prm) {
  if (p.rank() != 2 || p.dim(1) != prm.K) throw ConfigError("descriptor_map: descriptor shape " + ag::shape_str(p.shape()));
  const int B = p.dim(0);
  auto spatial = ag::reshape(prm.psi_out(ag::relu(prm.psi_hidden(p))), Shape{B, prm.K, prm.H, prm.W});
  auto refined = prm.phi_d2(ag::relu(prm.phi_d1(spatial)));
  auto gate = ag::sigmoid(ag::linear(p, prm.W_d, Var<T>()));
  return {refined * detail::as_channel_gate(gate), false};
}

/// M⁽ᶠ⁾ = φ_f(F) ⊙ σ(W_s p). `F` is [B, C_f, H, W].
template <typename T>
SemanticMap<T> feature_sdm(const Var<T>& F, const Var<T>& p, const SdmParams<T>& prm) {
  if (F.rank() != 4 || F.dim(1) != prm.C_f || F.dim(2) != prm.H || F.dim(3) != prm.W)
    throw ConfigError("feature_sdm: feature shape " + ag::shape_str(F.shape()));
  if (p.rank() != 2 || p.dim(1) != prm.K || p.dim(0) != F.dim(0))
    throw ConfigError("feature_sdm: descriptor shape " + ag::shape_str(p.shape()));
  auto refined = prm.phi_f2(ag::relu(prm.phi_f1(F)));
  auto gate = ag::sigmoid(ag::linear(p, prm.W_s, Var<T>()));
  return {refined * detail::as_channel_gate(gate), false};
}

/// Fusion gate g(p) = σ(MLP(p)), [B, K].
template <typename T>
Var<T> fusion_gate(const Var<T>& p, const SdmParams<T>& prm) {
  return ag::sigmoid(prm.gate(p));
}

/// Variant-dependent combination before normalization. Unused inputs may be
/// undefined Vars.
template <typename T>
Var<T> fuse_sdm_raw(const SemanticMap<T>& Md, const SemanticMap<T>& Mf, const Var<T>& p, const SdmParams<T>& prm) {
  switch (prm.variant) {
    case SdmVariant::DescriptorOnly: return Md.values;
    case SdmVariant::FeatureOnly: return Mf.values;
    default: break;
  }
  if (Md.values.shape() != Mf.values.shape()) throw ConfigError("fuse_sdm: map shapes differ");
  switch (prm.variant) {
    case SdmVariant::HybridAdd: return Md.values + Mf.values;
    case SdmVariant::HybridMul: return Md.values * Mf.values;
    case SdmVariant::HybridGated: {
      auto g = detail::as_channel_gate(fusion_gate(p, prm));
      return Md.values + g * (Mf.values - Md.values);
    }
    default: throw ConfigError("fuse_sdm: unknown variant");
  }
}

inline constexpr double kSdmNormEps = 1e-6;

template <typename T>
SemanticMap<T> fuse_sdm(const SemanticMap<T>& Md, const SemanticMap<T>& Mf, const Var<T>& p, const SdmParams<T>& prm) {
  return {ag::minmax_normalize(fuse_sdm_raw(Md, Mf, p, prm), T(kSdmNormEps)), true};
}

/// Full SDM for one layer, computing only the paths the variant needs.
template <typename T>
SemanticMap<T> sdm_forward(const Var<T>& F, const Var<T>& p, const SdmParams<T>& prm) {
  SemanticMap<T> Md, Mf;
  if (prm.uses_descriptor_path()) Md = descriptor_map(p, prm);
  if (prm.uses_feature_path()) Mf = feature_sdm(F, p, prm);
  return fuse_sdm(Md, Mf, p, prm);
}

}  // namespace semcov
