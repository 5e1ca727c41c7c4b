#pragma once

// The semantic encoder: convolutional backbone, descriptor-token cross
// attention, per-layer SDM/DAM stacking under five orderings, optional
// descriptor feedback, and the classification/descriptor heads.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "semcov/dam.hpp"
#include "semcov/errors.hpp"
#include "semcov/io.hpp"
#include "semcov/nn.hpp"
#include "semcov/sdm.hpp"

namespace semcov {

enum class Ordering { AttnThenDam, DamThenAttn, MixtureAttnFirst, MixtureDamFirst, MixtureGated };

inline const char* to_string(Ordering o) {
  switch (o) {
    case Ordering::AttnThenDam: return "attn_then_dam";
    case Ordering::DamThenAttn: return "dam_then_attn";
    case Ordering::MixtureAttnFirst: return "mixture_attn_first";
    case Ordering::MixtureDamFirst: return "mixture_dam_first";
    case Ordering::MixtureGated: return "mixture_gated";
  }
  return "?";
}

inline Ordering ordering_from_string(const std::string& s) {
  for (auto o : {Ordering::AttnThenDam, Ordering::DamThenAttn, Ordering::MixtureAttnFirst, Ordering::MixtureDamFirst,
                 Ordering::MixtureGated})
    if (s == to_string(o)) return o;
  throw ConfigError("unknown ordering \"" + s + "\"");
}

inline constexpr Ordering kAllOrderings[] = {Ordering::AttnThenDam, Ordering::DamThenAttn, Ordering::MixtureAttnFirst,
                                             Ordering::MixtureDamFirst, Ordering::MixtureGated};

struct EncoderConfig {
  int n_layers = 3;
  Ordering ordering = Ordering::AttnThenDam;
  bool feedback = true;
  bool feedback_average = false;  // blend p' with the layer input instead of replacing it
  SdmVariant sdm_variant = SdmVariant::HybridGated;
  bool gate_per_channel = false;
  /// Baseline without descriptor conditioning: each layer is φ(Normalize(F)).
  bool visual_only = false;

  int K = 7, T = 2;
  int C_f = 32, H_f = 8, W_f = 8;
  int D = 32, n_heads = 4;
  int E = 32;  // alignment embedding dim
  int image_channels = 3;

  int image_height() const { return 4 * H_f; }
  int image_width() const { return 4 * W_f; }

  void validate() const {
    if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
    if (K <= 0 || T <= 0 || C_f <= 0 || H_f <= 0 || W_f <= 0 || D <= 0 || E <= 0 || image_channels <= 0)
      throw ConfigError("encoder dims must be positive");
    if (n_heads <= 0 || D % n_heads != 0) throw ConfigError("D must be divisible by n_heads");
  }
};

inline io::Json to_json(const EncoderConfig& c) {
  return {{"n_layers", c.n_layers},     {"ordering", to_string(c.ordering)},
          {"feedback", c.feedback},     {"feedback_average", c.feedback_average},
          {"sdm_variant", to_string(c.sdm_variant)}, {"gate_per_channel", c.gate_per_channel},
          {"visual_only", c.visual_only}, {"K", c.K}, {"T", c.T}, {"C_f", c.C_f}, {"H_f", c.H_f},
          {"W_f", c.W_f}, {"D", c.D}, {"n_heads", c.n_heads}, {"E", c.E}, {"image_channels", c.image_channels}};
}

inline EncoderConfig encoder_config_from_json(const io::Json& j, EncoderConfig c = {}) {
  auto get = [&](const char* k, auto& field) {
    if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
  };
  get("n_layers", c.n_layers);
  if (j.contains("ordering")) c.ordering = ordering_from_string(j.at("ordering").get<std::string>());
  get("feedback", c.feedback);
  get("feedback_average", c.feedback_average);
  if (j.contains("sdm_variant")) c.sdm_variant = sdm_variant_from_string(j.at("sdm_variant").get<std::string>());
  get("gate_per_channel", c.gate_per_channel);
  get("visual_only", c.visual_only);
  get("K", c.K);
  get("T", c.T);
  get("C_f", c.C_f);
  get("H_f", c.H_f);
  get("W_f", c.W_f);
  get("D", c.D);
  get("n_heads", c.n_heads);
  get("E", c.E);
  get("image_channels", c.image_channels);
  return c;
}

/// Three convolution blocks: two stride-2 and one stride-1, so a
/// C×(4H_f)×(4W_f) image maps to C_f×H_f×W_f. Any type with the same call and
/// `collect` surface can replace it.
template <typename T>
struct ConvBackbone {
  Conv2d<T> conv1, conv2, conv3;
  ConvBackbone() = default;
  ConvBackbone(int in_channels, int C_f, Rng& rng)
      : conv1(in_channels, std::max(4, C_f / 2), 3, 2, rng),
        conv2(std::max(4, C_f / 2), C_f, 3, 2, rng),
        conv3(C_f, C_f, 3, 1, rng) {}
  Var<T> operator()(const Var<T>& x) const { return ag::relu(conv3(ag::relu(conv2(ag::relu(conv1(x)))))); }
  void collect(const std::string& prefix, ParamList<T>& out) const {
    conv1.collect(prefix + ".conv1", out);
    conv2.collect(prefix + ".conv2", out);
    conv3.collect(prefix + ".conv3", out);
  }
};

template <typename T>
struct AttentionParams {
  int D = 0, n_heads = 1;
  Mlp<T> token;  // t_d = ψ(p), K → D → D
  Linear<T> q, k, v, o;
  Mlp<T> ffn;  // D → 2D → D
  LayerNorm<T> ln;

  AttentionParams() = default;
  AttentionParams(int K, int D_, int heads, Rng& rng)
      : D(D_), n_heads(heads), token(K, D_, D_, rng), q(D_, D_, rng), k(D_, D_, rng), v(D_, D_, rng),
        o(D_, D_, rng), ffn(D_, 2 * D_, D_, rng), ln(D_) {}

  void collect(const std::string& prefix, ParamList<T>& out) const {
    token.collect(prefix + ".token", out);
    q.collect(prefix + ".q", out);
    k.collect(prefix + ".k", out);
    v.collect(prefix + ".v", out);
    o.collect(prefix + ".o", out);
    ffn.collect(prefix + ".ffn", out);
    ln.collect(prefix + ".ln", out);
  }
};

/// Each spatial position's C_f-vector projected to D; rows in row-major
/// spatial order. [B, C_f, H, W] → [B, H·W, D].
template <typename T>
Var<T> patch_tokens(const Var<T>& F, const Linear<T>& proj) {
  const int B = F.dim(0), C = F.dim(1), N = F.dim(2) * F.dim(3);
  auto flat = ag::permute(ag::reshape(F, Shape{B, C, N}), {0, 2, 1});
  return proj(flat);
}

template <typename T>
struct AttentionOutput {
  Var<T> token;     // after FFN + layer norm, [B, D]
  Var<T> residual;  // MHA(t_d, t_f) + t_d, [B, D]
  Var<T> weights;   // [B, heads, N]
};

/// Single-query multi-head cross attention of the descriptor token over patch
/// tokens. `score_bias`, when defined, is added to the attention logits and
/// must broadcast to [B·heads, 1, N].
template <typename T>
AttentionOutput<T> cross_attention(const Var<T>& t_d, const Var<T>& t_f, const AttentionParams<T>& prm,
                                   const Var<T>& score_bias = Var<T>()) {
  const int B = t_f.dim(0), N = t_f.dim(1), D = prm.D, h = prm.n_heads, dh = D / h;
  if (t_d.rank() != 2 || t_d.dim(0) != B || t_d.dim(1) != D || t_f.dim(2) != D)
    throw ConfigError("cross_attention: token shapes " + ag::shape_str(t_d.shape()) + " / " + ag::shape_str(t_f.shape()));
  auto Q = ag::reshape(prm.q(t_d), Shape{B * h, 1, dh});
  auto heads = [&](const Var<T>& x) {
    return ag::reshape(ag::permute(ag::reshape(x, Shape{B, N, h, dh}), {0, 2, 1, 3}), Shape{B * h, N, dh});
  };
  auto Kh = heads(prm.k(t_f));
  auto Vh = heads(prm.v(t_f));
  auto scores = ag::bmm(Q, Kh, false, true) * static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  if (score_bias.defined()) scores = scores + score_bias;
  auto attn = ag::softmax(scores);
  auto ctx = ag::reshape(ag::bmm(attn, Vh), Shape{B, D});
  AttentionOutput<T> out;
  out.residual = prm.o(ctx) + t_d;
  out.token = prm.ln(out.residual + prm.ffn(out.residual));
  out.weights = ag::reshape(attn, Shape{B, h, N});
  return out;
}

template <typename T>
struct LayerParams {
  SdmParams<T> sdm;
  DamParams<T> dam;
  AttentionParams<T> attn;
  Var<T> mix_gate;  // [1], mixture_gated only

  void collect(const std::string& prefix, ParamList<T>& out, const EncoderConfig& cfg) const {
    if (cfg.visual_only) {
      dam.norm.collect(prefix + ".dam.norm", out);
      dam.phi.collect(prefix + ".dam.phi", out);
      return;
    }
    sdm.collect(prefix + ".sdm", out);
    dam.collect(prefix + ".dam", out);
    attn.collect(prefix + ".attn", out);
    if (cfg.ordering == Ordering::MixtureGated) out.push_back({prefix + ".mix_gate", mix_gate, true});
  }
};

template <typename T, typename Backbone = ConvBackbone<T>>
struct EncoderParams {
  EncoderConfig cfg;
  Backbone backbone;
  Linear<T> token_proj;  // C_f → D
  std::vector<LayerParams<T>> layers;
  Linear<T> feedback_proj;  // D → K
  Linear<T> head_cls;       // C_f → T
  Linear<T> head_desc;      // C_f → K

  EncoderParams() = default;
  EncoderParams(const EncoderConfig& c, Rng& rng) : cfg(c) {
    cfg.validate();
    backbone = Backbone(cfg.image_channels, cfg.C_f, rng);
    token_proj = Linear<T>(cfg.C_f, cfg.D, rng);
    for (int l = 0; l < cfg.n_layers; ++l) {
      LayerParams<T> lp;
      lp.sdm = SdmParams<T>(cfg.K, cfg.C_f, cfg.H_f, cfg.W_f, cfg.D, cfg.sdm_variant, rng);
      lp.dam = DamParams<T>(cfg.C_f, cfg.K, cfg.D, rng, cfg.gate_per_channel);
      lp.attn = AttentionParams<T>(cfg.K, cfg.D, cfg.n_heads, rng);
      lp.mix_gate = const_param<T>({1}, T(0));
      layers.push_back(std::move(lp));
    }
    feedback_proj = Linear<T>(cfg.D, cfg.K, rng);
    head_cls = Linear<T>(cfg.C_f, cfg.T, rng);
    head_desc = Linear<T>(cfg.C_f, cfg.K, rng);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    backbone.collect(prefix + "backbone", out);
    if (!cfg.visual_only) token_proj.collect(prefix + "token_proj", out);
    for (size_t l = 0; l < layers.size(); ++l) layers[l].collect(prefix + "layers." + std::to_string(l), out, cfg);
    if (!cfg.visual_only && cfg.feedback) feedback_proj.collect(prefix + "feedback_proj", out);
    head_cls.collect(prefix + "head_cls", out);
    head_desc.collect(prefix + "head_desc", out);
  }
};

struct InvocationCounts {
  int sdm = 0, dam = 0, attn = 0;
  bool operator==(const InvocationCounts&) const = default;
};

/// Per-layer invocations each ordering performs.
inline InvocationCounts invocations_per_layer(Ordering o) {
  return o == Ordering::MixtureGated ? InvocationCounts{1, 2, 2} : InvocationCounts{1, 1, 1};
}

template <typename T>
struct ForwardOutput {
  Var<T> class_logits;       // [B, T]
  Var<T> descriptor_logits;  // [B, K]
  Var<T> pooled;             // [B, C_f]
  std::vector<SemanticMap<T>> per_layer_maps;
  std::vector<Var<T>> layer_descriptors;  // descriptor input consumed by each layer
  std::vector<Var<T>> layer_tokens;
  InvocationCounts counts;
};

struct ForwardOptions {
  bool training = false;
  bool record_maps = false;
};

/// Whether layer `l` of `n` runs attention before DAM.
inline bool attention_first(Ordering o, int l, int n) {
  const int split = (n + 1) / 2;  // ⌈n/2⌉
  switch (o) {
    case Ordering::AttnThenDam: return true;
    case Ordering::DamThenAttn: return false;
    case Ordering::MixtureAttnFirst: return l < split;
    case Ordering::MixtureDamFirst: return l >= split;
    case Ordering::MixtureGated: return true;
  }
  return true;
}

/// p' = σ(feedback_proj(t)).
template <typename T>
Var<T> feedback_refine(const Var<T>& t, const Linear<T>& proj) {
  return ag::sigmoid(proj(t));
}

/// x: [B, C, 4H_f, 4W_f], p: [B, K].
template <typename T, typename Backbone>
ForwardOutput<T> encoder_forward(const Var<T>& x, const Var<T>& p, const EncoderParams<T, Backbone>& prm,
                                 const ForwardOptions& opt = {}) {
  const auto& cfg = prm.cfg;
  if (x.rank() != 4 || x.dim(1) != cfg.image_channels || x.dim(2) != cfg.image_height() ||
      x.dim(3) != cfg.image_width())
    throw ConfigError("encoder_forward: image shape " + ag::shape_str(x.shape()));
  if (p.rank() != 2 || p.dim(0) != x.dim(0) || p.dim(1) != cfg.K)
    throw ConfigError("encoder_forward: descriptor shape " + ag::shape_str(p.shape()));
  if (static_cast<int>(prm.layers.size()) != cfg.n_layers) throw ConfigError("encoder_forward: layer count mismatch");

  ForwardOutput<T> out;
  Var<T> F = prm.backbone(x);
  if (F.dim(2) != cfg.H_f || F.dim(3) != cfg.W_f)
    throw ConfigError("backbone produced " + ag::shape_str(F.shape()) + ", expected spatial " + std::to_string(cfg.H_f) +
                      "x" + std::to_string(cfg.W_f));
  Var<T> q = p;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& lp = prm.layers[l];
    if (cfg.visual_only) {
      F = ag::relu(lp.dam.phi(lp.dam.norm(F, opt.training)));
      ++out.counts.dam;
      continue;
    }
    out.layer_descriptors.push_back(q);
    auto M = sdm_forward(F, q, lp.sdm);
    ++out.counts.sdm;
    if (opt.record_maps) out.per_layer_maps.push_back(M);
    auto u_bar = mean_uncertainty(q);
    auto t_d = lp.attn.token(q);

    auto attn_then_dam = [&](const Var<T>& feat) {
      auto a = cross_attention(t_d, patch_tokens(feat, prm.token_proj), lp.attn);
      ++out.counts.attn;
      auto f = dam_forward(feat, a.token, M, u_bar, lp.dam, opt.training);
      ++out.counts.dam;
      return std::pair{f, a.token};
    };
    auto dam_then_attn = [&](const Var<T>& feat) {
      auto f = dam_forward(feat, t_d, M, u_bar, lp.dam, opt.training);
      ++out.counts.dam;
      auto a = cross_attention(t_d, patch_tokens(f, prm.token_proj), lp.attn);
      ++out.counts.attn;
      return std::pair{f, a.token};
    };

    Var<T> token;
    if (cfg.ordering == Ordering::MixtureGated) {
      auto [fa, ta] = attn_then_dam(F);
      auto [fb, tb] = dam_then_attn(F);
      auto mix = ag::sigmoid(lp.mix_gate);
      F = fb + mix * (fa - fb);
      token = tb + mix * (ta - tb);
    } else if (attention_first(cfg.ordering, l, cfg.n_layers)) {
      std::tie(F, token) = attn_then_dam(F);
    } else {
      std::tie(F, token) = dam_then_attn(F);
    }
    out.layer_tokens.push_back(token);
    if (cfg.feedback) {
      auto refined = feedback_refine(token, prm.feedback_proj);
      q = cfg.feedback_average ? (q + refined) * T(0.5) : refined;
    }
  }
  out.pooled = ag::spatial_mean(F);
  out.class_logits = prm.head_cls(out.pooled);
  out.descriptor_logits = prm.head_desc(out.pooled);
  return out;
}

}  // namespace semcov
