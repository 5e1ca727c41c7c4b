#pragma once

// Training objectives: classification and descriptor losses, descriptor-visual
// alignment, the soft-TPR coverage decorrelation term, the joint objective,
// and a central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "semcov/coverage.hpp"
#include "semcov/errors.hpp"
#include "semcov/nn.hpp"

namespace semcov {

struct LossWeights {
  double lambda_desc = 0.05;
  double lambda_dva = 0.1;
  double lambda_cdi = 0.1;

  void validate() const {
    if (!(lambda_desc >= 0 && lambda_dva >= 0 && lambda_cdi >= 0)) throw ConfigError("loss weights must be >= 0");
  }
};

inline constexpr double kTauInit = 0.07;
inline constexpr double kTauMin = 0.01;
inline constexpr double kTauMax = 1.0;

template <typename T>
struct DvaParams {
  Linear<T> vis_proj;   // pooled → E
  Linear<T> desc_proj;  // K → E
  Var<T> log_temperature;
  bool symmetric = false;

  DvaParams() = default;
  DvaParams(int pooled_dim, int K, int E, Rng& rng, bool symmetric_ = false)
      : vis_proj(pooled_dim, E, rng), desc_proj(K, E, rng),
        log_temperature(const_param<T>({1}, static_cast<T>(std::log(kTauInit)))), symmetric(symmetric_) {}

  Var<T> temperature() const {
    return ag::exp(ag::clamp(log_temperature, static_cast<T>(std::log(kTauMin)), static_cast<T>(std::log(kTauMax))));
  }
  Var<T> visual_embedding(const Var<T>& z) const { return ag::l2_normalize(vis_proj(z)); }
  Var<T> descriptor_embedding(const Var<T>& p) const { return ag::l2_normalize(desc_proj(p)); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    vis_proj.collect(prefix + "vis_proj", out);
    desc_proj.collect(prefix + "desc_proj", out);
    out.push_back({prefix + "log_temperature", log_temperature, true});
  }
};

/// Per-batch inputs and model outputs for the loss terms.
template <typename T>
struct BatchContext {
  std::vector<int> labels;
  std::vector<int> subgroups;
  std::vector<std::vector<double>> descriptors;
  Var<T> p;  // [B, K] descriptor inputs
  Var<T> class_logits;
  Var<T> descriptor_logits;
  Var<T> pooled;
  ScgDims dims;

  size_t size() const { return labels.size(); }
  void validate() const {
    const size_t B = labels.size();
    if (subgroups.size() != B || descriptors.size() != B) throw ArgumentError("batch context: ragged per-sample fields");
    if (p.defined() && p.dim(0) != static_cast<int>(B)) throw ArgumentError("batch context: descriptor batch size");
    if (class_logits.defined() && class_logits.dim(0) != static_cast<int>(B))
      throw ArgumentError("batch context: logits batch size");
  }
};

/// Mean softmax cross-entropy.
template <typename T>
Var<T> classification_loss(const Var<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<int>(labels.size()))
    throw ArgumentError("classification_loss: logits/labels size mismatch");
  for (int y : labels)
    if (y < 0 || y >= logits.dim(1)) throw ArgumentError("classification_loss: label out of range");
  return -ag::mean(ag::pick(ag::log_softmax(logits), labels));
}

/// Mean binary cross-entropy with logits against soft targets, evaluated
/// stably as max(x,0) − x p + log(1 + e^{−|x|}).
template <typename T>
Var<T> descriptor_loss(const Var<T>& logits, const Var<T>& targets) {
  if (logits.shape() != targets.shape()) throw ArgumentError("descriptor_loss: shape mismatch");
  const auto& x = logits.value();
  const auto& p = targets.value();
  if ((p < T(0)).any() || (p > T(1)).any() || !p.isFinite().all())
    throw ArgumentError("descriptor_loss: target outside [0,1]");
  const auto n = static_cast<T>(x.size());
  Array<T> out(1);
  out(0) = (x.max(T(0)) - x * p + (T(1) + (-x.abs()).exp()).log()).sum() / n;
  return ag::detail::make_result<T>(Shape{1}, std::move(out), {logits}, [p, n](ag::Node<T>& self) {
    if (auto* g = ag::detail::grad_of(self, 0)) {
      const auto& xv = self.inputs[0]->value;
      const Array<T> sig = T(1) / (T(1) + (-xv).exp());
      *g += self.grad(0) * (sig - p) / n;
    }
  });
}

/// Row-wise cross-entropy of S = v dᵀ / τ against diagonal targets.
template <typename T>
Var<T> similarity_matrix(const Var<T>& v, const Var<T>& d, const Var<T>& tau) {
  const int B = v.dim(0), E = v.dim(1);
  auto S = ag::bmm(ag::reshape(v, Shape{1, B, E}), ag::reshape(d, Shape{1, B, E}), false, true);
  return ag::reshape(S, Shape{B, B}) / tau;
}

template <typename T>
Var<T> dva_loss(const Var<T>& pooled, const Var<T>& descriptors, const DvaParams<T>& prm) {
  const int B = pooled.dim(0);
  if (B < 1 || descriptors.dim(0) != B) throw ArgumentError("dva_loss: batch size mismatch");
  auto S = similarity_matrix(prm.visual_embedding(pooled), prm.descriptor_embedding(descriptors), prm.temperature());
  std::vector<int> diag(B);
  for (int i = 0; i < B; ++i) diag[i] = i;
  auto rows = -ag::mean(ag::pick(ag::log_softmax(S), diag));
  if (!prm.symmetric) return rows;
  auto cols = -ag::mean(ag::pick(ag::log_softmax(ag::permute(S, {1, 0})), diag));
  return (rows + cols) * T(0.5);
}

/// Probability assigned to the true class, [B]. A single-logit binary head
/// gives y σ(x) + (1 − y)(1 − σ(x)).
template <typename T>
Var<T> true_class_probability(const Var<T>& logits, const std::vector<int>& labels) {
  if (logits.dim(1) == 1) {
    std::vector<T> yv;
    for (int y : labels) {
      if (y != 0 && y != 1) throw ArgumentError("true_class_probability: binary label out of range");
      yv.push_back(static_cast<T>(y));
    }
    const int B = logits.dim(0);
    auto y = Var<T>::constant(Shape{B}, Eigen::Map<Array<T>>(yv.data(), B));
    auto s = ag::sigmoid(ag::reshape(logits, Shape{B}));
    return y * s + ag::rsub(T(1), y) * ag::rsub(T(1), s);
  }
  return ag::pick(ag::softmax(logits), labels);
}

template <typename T>
struct GroupTpr {
  Var<T> tpr;  // scalar
  T weight = 0;
};

/// Membership-weighted mean of the true-class probability over the members of
/// (class, subgroup) in the batch, weighted by the group's descriptor entry.
template <typename T>
GroupTpr<T> soft_group_tpr(const BatchContext<T>& ctx, const SCGKey& g) {
  ctx.validate();
  const int B = static_cast<int>(ctx.size());
  std::vector<T> mask(B, T(0));
  bool any = false;
  for (int i = 0; i < B; ++i)
    if (ctx.labels[i] == g.class_id && ctx.subgroups[i] == g.subgroup_id) {
      mask[i] = T(1);
      any = true;
    }
  GroupTpr<T> out;
  if (!any) {
    out.tpr = Var<T>::scalar(T(1));
    return out;
  }
  auto q = true_class_probability(ctx.class_logits, ctx.labels);
  auto m = Var<T>::constant(Shape{B}, Eigen::Map<Array<T>>(mask.data(), B));
  // w_i = p_i[d] on members; taken from the Var so it stays differentiable.
  std::vector<int> col(B, g.descriptor_id);
  auto w = ag::pick(ctx.p, col) * m;
  out.weight = w.value().sum();
  if (!(out.weight > T(0))) {
    out.tpr = Var<T>::scalar(T(1));
    out.weight = T(0);
    return out;
  }
  out.tpr = ag::sum(w * q) / ag::sum(w);
  return out;
}

struct CdiLossInfo {
  size_t eligible = 0;
  bool degenerate = false;
};

/// |pearson(c_g, e_g)| over SCGs whose batch membership weight reaches
/// `min_weight`; coverage is constant. 0 with fewer than two eligible SCGs.
template <typename T>
Var<T> cdi_loss(const BatchContext<T>& ctx, const CoverageTable& coverage, double min_weight = 0.5,
                CdiLossInfo* info = nullptr) {
  ctx.validate();
  if (!(coverage.dims == ctx.dims)) throw ArgumentError("cdi_loss: coverage table does not match batch dims");
  const int B = static_cast<int>(ctx.size());
  const auto& dims = ctx.dims;
  std::vector<double> weight(dims.count(), 0.0);
  for (int i = 0; i < B; ++i)
    for (int d = 0; d < dims.K; ++d) weight[dims.index({ctx.labels[i], d, ctx.subgroups[i]})] += ctx.descriptors[i][d];

  std::vector<size_t> eligible;
  for (size_t gi = 0; gi < weight.size(); ++gi)
    if (weight[gi] > 0 && weight[gi] >= min_weight) eligible.push_back(gi);
  if (info) *info = {eligible.size(), false};
  if (eligible.size() < 2) {
    if (info) info->degenerate = true;
    return Var<T>::scalar(T(0));
  }

  const int G = static_cast<int>(eligible.size());
  Array<T> Wm = Array<T>::Zero(static_cast<int64_t>(G) * B);
  Array<T> cov(G);
  std::vector<int> row_of(dims.count(), -1);
  for (int r = 0; r < G; ++r) {
    row_of[eligible[r]] = r;
    cov(r) = static_cast<T>(coverage.entries[eligible[r]].coverage);
  }
  for (int i = 0; i < B; ++i)
    for (int d = 0; d < dims.K; ++d) {
      const size_t gi = dims.index({ctx.labels[i], d, ctx.subgroups[i]});
      if (row_of[gi] >= 0)
        Wm(static_cast<int64_t>(row_of[gi]) * B + i) = static_cast<T>(ctx.descriptors[i][d] / weight[gi]);
    }
  auto q = true_class_probability(ctx.class_logits, ctx.labels);
  auto tpr = ag::matmul(Var<T>::constant(Shape{G, B}, std::move(Wm)), q);
  auto err = ag::rsub(T(1), tpr);
  bool degenerate = false;
  auto loss = ag::abs_pearson(cov, err, &degenerate);
  if (info) info->degenerate = degenerate;
  return loss;
}

template <typename T>
struct LossBreakdown {
  Var<T> total;
  double cls = 0, desc = 0, dva = 0, cdi = 0;
  double total_value() const { return static_cast<double>(total.item()); }
};

template <typename T>
LossBreakdown<T> total_loss(const BatchContext<T>& ctx, const CoverageTable& coverage, const DvaParams<T>& dva,
                            const LossWeights& w, double cdi_min_weight = 0.5) {
  w.validate();
  LossBreakdown<T> out;
  auto l_cls = classification_loss(ctx.class_logits, ctx.labels);
  auto l_desc = descriptor_loss(ctx.descriptor_logits, ctx.p);
  auto l_dva = dva_loss(ctx.pooled, ctx.p, dva);
  auto l_cdi = cdi_loss(ctx, coverage, cdi_min_weight);
  out.cls = l_cls.item();
  out.desc = l_desc.item();
  out.dva = l_dva.item();
  out.cdi = l_cdi.item();
  out.total = l_cls;
  if (w.lambda_desc != 0) out.total = out.total + l_desc * static_cast<T>(w.lambda_desc);
  if (w.lambda_dva != 0) out.total = out.total + l_dva * static_cast<T>(w.lambda_dva);
  if (w.lambda_cdi != 0) out.total = out.total + l_cdi * static_cast<T>(w.lambda_cdi);
  return out;
}

struct GradCheckResult {
  double max_rel_error = 0;
  std::string worst_param;
  long worst_index = -1;
  double analytic = 0, numeric = 0;
  size_t checked = 0;
};

/// Default grouping by module family across layers, e.g.
/// "encoder.layers.0.sdm.psi_out.weight" → "encoder.layers.sdm".
inline std::string param_group(const std::string& name) {
  std::vector<std::string> parts;
  size_t b = 0;
  for (size_t e; (e = name.find('.', b)) != std::string::npos; b = e + 1) parts.push_back(name.substr(b, e - b));
  parts.push_back(name.substr(b));
  if (parts.size() > 3 && parts[1] == "layers") return parts[0] + ".layers." + parts[3];
  return parts.size() > 1 ? parts[0] + "." + parts[1] : parts[0];
}

/// Central differences on a random subsample of up to `coords_per_group`
/// coordinates of each parameter group, against the gradient of one backward
/// pass. Analytic gradients come from `loss_a` over `pa`; the differences are
/// taken on `loss_f` over `pf`, a parameter list with the same names and
/// values, possibly in a wider type. Relative error is
/// |a − n| / max(|a|, |n|, 1e-8).
template <typename TA, typename TF>
GradCheckResult gradient_check(const std::function<Var<TA>()>& loss_a, ParamList<TA>& pa,
                               const std::function<Var<TF>()>& loss_f, ParamList<TF>& pf, double epsilon, Rng& rng,
                               size_t coords_per_group = 200,
                               const std::function<std::string(const std::string&)>& group_of = param_group) {
  if (!(epsilon > 0) || !std::isfinite(epsilon)) throw ArgumentError("gradient_check: epsilon must be positive");
  if (pa.size() != pf.size()) throw ArgumentError("gradient_check: parameter lists differ");
  for (auto& p : pa) p.var.zero_grad();
  auto loss = loss_a();
  if (!std::isfinite(static_cast<double>(loss.item()))) throw DiagnosticError("gradient_check: non-finite loss");
  ag::backward(loss);

  struct Coord {
    size_t param;
    int64_t index;
  };
  std::vector<std::string> group_names;
  std::vector<std::vector<Coord>> groups;
  for (size_t k = 0; k < pa.size(); ++k) {
    if (!pa[k].trainable) continue;
    if (pf[k].name != pa[k].name || pf[k].var.size() != pa[k].var.size())
      throw ArgumentError("gradient_check: parameter lists differ at " + pa[k].name);
    const auto g = group_of(pa[k].name);
    auto it = std::find(group_names.begin(), group_names.end(), g);
    if (it == group_names.end()) {
      group_names.push_back(g);
      groups.emplace_back();
      it = group_names.end() - 1;
    }
    auto& coords = groups[it - group_names.begin()];
    for (int64_t i = 0; i < pa[k].var.size(); ++i) coords.push_back({k, i});
  }

  GradCheckResult res;
  ag::NoGradGuard guard;
  for (auto& coords : groups) {
    if (coords.size() > coords_per_group) {
      rng.shuffle(coords.begin(), coords.end());
      coords.resize(coords_per_group);
    }
    for (const auto& c : coords) {
      auto& pvar = pa[c.param].var;
      const double a = pvar.node()->grad.size() ? static_cast<double>(pvar.node()->grad(c.index)) : 0.0;
      auto& val = pf[c.param].var.mutable_value();
      const TF orig = val(c.index);
      val(c.index) = orig + static_cast<TF>(epsilon);
      const TF fp = loss_f().item();
      val(c.index) = orig - static_cast<TF>(epsilon);
      const TF fm = loss_f().item();
      val(c.index) = orig;
      if (!std::isfinite(static_cast<double>(fp)) || !std::isfinite(static_cast<double>(fm)))
        throw DiagnosticError("gradient_check: non-finite loss");
      const double num = static_cast<double>((fp - fm) / (2 * static_cast<TF>(epsilon)));
      const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-8});
      ++res.checked;
      if (rel > res.max_rel_error || res.worst_index < 0) {
        res.max_rel_error = rel;
        res.worst_param = pa[c.param].name;
        res.worst_index = c.index;
        res.analytic = a;
        res.numeric = num;
      }
    }
  }
  return res;
}

/// Single-precision-type form: differences taken on the same parameters.
template <typename T>
GradCheckResult gradient_check(const std::function<Var<T>()>& loss_eval, ParamList<T>& params, double epsilon,
                               Rng& rng, size_t coords_per_group = 200) {
  return gradient_check<T, T>(loss_eval, params, loss_eval, params, epsilon, rng, coords_per_group);
}

}  // namespace semcov
