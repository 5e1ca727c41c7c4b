#pragma once

// Evaluation metrics: ranking, threshold and calibration scores, per-SCG
// fairness summaries and embedding grounding scores, plus the report type.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "semcov/coverage.hpp"
#include "semcov/errors.hpp"
#include "semcov/io.hpp"

namespace semcov {

struct PredictionSet {
  std::vector<std::vector<double>> probs;  // N × T
  std::vector<int> labels;
  std::vector<int> subgroups;
  std::vector<std::vector<double>> descriptors;
  std::vector<std::vector<double>> vis_embeds;   // optional, N × E
  std::vector<std::vector<double>> desc_embeds;  // optional, N × E

  size_t size() const { return labels.size(); }
  int num_classes() const { return probs.empty() ? 0 : static_cast<int>(probs.front().size()); }

  void validate() const {
    const size_t n = labels.size();
    if (probs.size() != n) throw ArgumentError("prediction set: probs/labels length differ");
    if (!subgroups.empty() && subgroups.size() != n) throw ArgumentError("prediction set: subgroups length");
    if (!descriptors.empty() && descriptors.size() != n) throw ArgumentError("prediction set: descriptors length");
    const int T = num_classes();
    for (size_t i = 0; i < n; ++i) {
      if (static_cast<int>(probs[i].size()) != T) throw ArgumentError("prediction set: ragged probabilities");
      double s = 0;
      for (double v : probs[i]) s += v;
      if (!(std::abs(s - 1.0) <= 1e-6)) throw ArgumentError("prediction set: probabilities of sample " + std::to_string(i) + " do not sum to 1");
      if (labels[i] < 0 || labels[i] >= T) throw ArgumentError("prediction set: label out of range");
    }
  }

  /// Lowest index wins ties.
  int predicted(size_t i) const {
    return static_cast<int>(std::max_element(probs[i].begin(), probs[i].end()) - probs[i].begin());
  }
};

/// Rank statistic with average ranks for ties. `degenerate` when one class is
/// absent (result 0.5).
inline double auroc(std::span<const double> scores, std::span<const int> positive, bool* degenerate = nullptr) {
  const size_t n = scores.size();
  if (positive.size() != n) throw ArgumentError("auroc: length mismatch");
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  size_t n_pos = 0;
  for (size_t i = 0; i < n;) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (size_t k = i; k <= j; ++k)
      if (positive[order[k]]) {
        rank_sum += avg;
        ++n_pos;
      }
    i = j + 1;
  }
  const size_t n_neg = n - n_pos;
  if (degenerate) *degenerate = n_pos == 0 || n_neg == 0;
  if (n_pos == 0 || n_neg == 0) return 0.5;
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1) / 2.0) / (np * static_cast<double>(n_neg));
}

/// Stepwise average precision; tied scores enter as one threshold.
inline double average_precision(std::span<const double> scores, std::span<const int> positive, bool* degenerate = nullptr) {
  const size_t n = scores.size();
  if (positive.size() != n) throw ArgumentError("average_precision: length mismatch");
  const size_t n_pos = static_cast<size_t>(std::count_if(positive.begin(), positive.end(), [](int v) { return v != 0; }));
  if (degenerate) *degenerate = n_pos == 0 || n_pos == n;
  if (n_pos == 0) return 0.0;
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  double ap = 0, prev_recall = 0;
  size_t tp = 0, seen = 0;
  for (size_t i = 0; i < n;) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    for (size_t k = i; k <= j; ++k) tp += positive[order[k]] != 0;
    seen = j + 1;
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j + 1;
  }
  return ap;
}

struct SensAtSpec {
  double sensitivity = 0;
  double threshold = std::numeric_limits<double>::infinity();
  bool unattainable = false;
};

/// Largest sensitivity over thresholds (predict positive when score ≥ thr)
/// whose specificity is at least `min_specificity`.
inline SensAtSpec sensitivity_at_specificity(std::span<const double> scores, std::span<const int> positive,
                                             double min_specificity = 0.95) {
  const size_t n = scores.size();
  if (positive.size() != n) throw ArgumentError("sensitivity_at_specificity: length mismatch");
  std::vector<double> thr(scores.begin(), scores.end());
  std::sort(thr.begin(), thr.end());
  thr.erase(std::unique(thr.begin(), thr.end()), thr.end());
  thr.push_back(std::numeric_limits<double>::infinity());
  size_t n_pos = 0;
  for (int v : positive) n_pos += v != 0;
  const size_t n_neg = n - n_pos;
  SensAtSpec best;
  best.unattainable = true;
  for (double t : thr) {
    size_t tp = 0, fp = 0;
    for (size_t i = 0; i < n; ++i)
      if (scores[i] >= t) (positive[i] ? tp : fp) += 1;
    const double spec = n_neg ? 1.0 - static_cast<double>(fp) / static_cast<double>(n_neg) : 1.0;
    const double sens = n_pos ? static_cast<double>(tp) / static_cast<double>(n_pos) : 0.0;
    if (spec >= min_specificity && (best.unattainable || sens > best.sensitivity)) {
      best = {sens, t, false};
    }
  }
  if (n_pos == 0) best.unattainable = true;
  if (best.unattainable) best.sensitivity = 0;
  return best;
}

/// Mean recall over the classes present in `labels`.
inline double balanced_accuracy(std::span<const int> labels, std::span<const int> predicted, int n_classes) {
  std::vector<size_t> support(n_classes, 0), hits(n_classes, 0);
  for (size_t i = 0; i < labels.size(); ++i) {
    ++support.at(labels[i]);
    hits[labels[i]] += predicted[i] == labels[i];
  }
  double s = 0;
  int present = 0;
  for (int c = 0; c < n_classes; ++c)
    if (support[c]) {
      s += static_cast<double>(hits[c]) / static_cast<double>(support[c]);
      ++present;
    }
  return present ? s / present : 0.0;
}

/// Unweighted mean F1 over all classes; a class with no true positives scores 0.
inline double macro_f1(std::span<const int> labels, std::span<const int> predicted, int n_classes) {
  if (n_classes <= 0) return 0.0;
  std::vector<size_t> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (predicted[i] == labels[i]) {
      ++tp.at(labels[i]);
    } else {
      ++fp.at(predicted[i]);
      ++fn.at(labels[i]);
    }
  }
  double s = 0;
  for (int c = 0; c < n_classes; ++c) {
    const double denom = 2.0 * tp[c] + fp[c] + fn[c];
    s += denom > 0 ? 2.0 * tp[c] / denom : 0.0;
  }
  return s / n_classes;
}

struct ClassificationMetrics {
  double auroc = 0.5, pr_auc = 0, sens_at_95_spec = 0, balanced_accuracy = 0, macro_f1 = 0;
  bool single_class = false;
  bool s95_unattainable = false;
};

inline ClassificationMetrics classification_metrics(const PredictionSet& preds, int positive_class = 1) {
  preds.validate();
  const int T = preds.num_classes();
  if (positive_class < 0 || positive_class >= T) throw ArgumentError("classification_metrics: positive class out of range");
  const size_t n = preds.size();
  std::vector<double> scores(n);
  std::vector<int> pos(n), pred(n);
  for (size_t i = 0; i < n; ++i) {
    scores[i] = preds.probs[i][positive_class];
    pos[i] = preds.labels[i] == positive_class;
    pred[i] = preds.predicted(i);
  }
  ClassificationMetrics m;
  m.auroc = auroc(scores, pos, &m.single_class);
  m.pr_auc = average_precision(scores, pos);
  const auto s = sensitivity_at_specificity(scores, pos, 0.95);
  m.sens_at_95_spec = s.sensitivity;
  m.s95_unattainable = s.unattainable;
  m.balanced_accuracy = balanced_accuracy(preds.labels, pred, T);
  m.macro_f1 = macro_f1(preds.labels, pred, T);
  return m;
}

/// Equal-width bins over max-class confidence; bin k covers [k/n, (k+1)/n),
/// the last bin is closed.
inline double ece(const PredictionSet& preds, int n_bins = 10) {
  if (n_bins < 1) throw ArgumentError("ece: n_bins must be >= 1");
  const size_t n = preds.size();
  if (n == 0) return 0.0;
  std::vector<double> conf_sum(n_bins, 0), acc_sum(n_bins, 0);
  std::vector<size_t> count(n_bins, 0);
  for (size_t i = 0; i < n; ++i) {
    const int k = preds.predicted(i);
    const double conf = preds.probs[i][k];
    int b = static_cast<int>(std::floor(conf * n_bins));
    b = std::clamp(b, 0, n_bins - 1);
    conf_sum[b] += conf;
    acc_sum[b] += k == preds.labels[i] ? 1.0 : 0.0;
    ++count[b];
  }
  double e = 0;
  for (int b = 0; b < n_bins; ++b)
    if (count[b]) {
      const double c = static_cast<double>(count[b]);
      e += c / static_cast<double>(n) * std::abs(acc_sum[b] / c - conf_sum[b] / c);
    }
  return e;
}

struct FairnessMetrics {
  double cdi = 0, tpr_w = 0, tpr_std = 0;
  size_t eligible = 0;
  bool cdi_degenerate = false;
};

inline bool scg_eligible(const CoverageValue& c, const ErrorValue& e, size_t min_count) {
  return c.count >= min_count && e.member_count >= min_count && e.effective_weight > 0;
}

inline FairnessMetrics fairness_metrics(const ErrorTable& per_scg, const CoverageTable& coverage, size_t min_count = 1) {
  if (!(per_scg.dims == coverage.dims)) throw ArgumentError("fairness_metrics: tables keyed differently");
  std::vector<double> tprs;
  for (size_t gi = 0; gi < per_scg.entries.size(); ++gi)
    if (scg_eligible(coverage.entries[gi], per_scg.entries[gi], min_count)) tprs.push_back(per_scg.entries[gi].tpr);
  if (tprs.empty()) throw DiagnosticError("fairness metrics need at least one eligible SCG");
  FairnessMetrics f;
  f.eligible = tprs.size();
  f.tpr_w = *std::min_element(tprs.begin(), tprs.end());
  const double mean = std::accumulate(tprs.begin(), tprs.end(), 0.0) / static_cast<double>(tprs.size());
  double ss = 0;
  for (double t : tprs) ss += (t - mean) * (t - mean);
  const auto [lo, hi] = std::minmax_element(tprs.begin(), tprs.end());
  f.tpr_std = *lo == *hi ? 0.0 : std::sqrt(ss / static_cast<double>(tprs.size()));
  if (tprs.size() < 2) {
    f.cdi = 0;
    f.cdi_degenerate = true;
  } else {
    const auto r = cdi(coverage, per_scg, min_count);
    f.cdi = r.cdi;
    f.cdi_degenerate = r.degenerate;
  }
  return f;
}

struct GroundingMetrics {
  double align_cos = 0, r_at_1 = 0;
  bool zero_vector = false;
};

inline double cosine(const std::vector<double>& a, const std::vector<double>& b, bool* zero = nullptr) {
  double ab = 0, aa = 0, bb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0 || bb == 0) {
    if (zero) *zero = true;
    return 0.0;
  }
  return ab / std::sqrt(aa * bb);
}

/// Mean paired cosine and image→descriptor top-1 retrieval over the full
/// gallery; ties go to the lowest index.
inline GroundingMetrics grounding_metrics(const std::vector<std::vector<double>>& vis,
                                          const std::vector<std::vector<double>>& desc) {
  const size_t n = vis.size();
  if (desc.size() != n || n == 0) throw ArgumentError("grounding_metrics: need paired non-empty embeddings");
  for (size_t i = 0; i < n; ++i)
    if (vis[i].size() != desc[i].size() || vis[i].size() != vis[0].size())
      throw ArgumentError("grounding_metrics: embedding dims differ");
  GroundingMetrics g;
  double cos_sum = 0;
  size_t hits = 0;
  for (size_t i = 0; i < n; ++i) {
    bool zero = false;
    cos_sum += cosine(vis[i], desc[i], &zero);
    g.zero_vector = g.zero_vector || zero;
    size_t best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < n; ++j) {
      const double s = cosine(vis[i], desc[j]);
      if (s > best_sim) {
        best_sim = s;
        best = j;
      }
    }
    hits += best == i;
  }
  g.align_cos = cos_sum / static_cast<double>(n);
  g.r_at_1 = static_cast<double>(hits) / static_cast<double>(n);
  return g;
}

/// Per-SCG TPR from hard argmax decisions with soft descriptor membership.
inline ErrorTable evaluation_error_table(const PredictionSet& preds, const ScgDims& dims,
                                         Membership membership = Membership::Soft) {
  std::vector<double> correct(preds.size());
  for (size_t i = 0; i < preds.size(); ++i) correct[i] = preds.predicted(i) == preds.labels[i] ? 1.0 : 0.0;
  return error_table(dims, preds.labels, preds.subgroups, preds.descriptors, correct, membership);
}

inline constexpr int kReportSchemaVersion = 1;

struct MetricReport {
  ClassificationMetrics classification;
  double ece = 0;
  FairnessMetrics fairness;
  GroundingMetrics grounding;
  bool has_grounding = false;
  ErrorTable per_scg;
  CoverageTable coverage;
  size_t min_count = 1;
  size_t n_samples = 0;
};

inline MetricReport build_report(const PredictionSet& preds, const CoverageTable& coverage, size_t min_count = 1,
                                 int positive_class = 1, int n_bins = 10) {
  MetricReport r;
  r.n_samples = preds.size();
  r.min_count = min_count;
  r.classification = classification_metrics(preds, positive_class);
  r.ece = ece(preds, n_bins);
  r.per_scg = evaluation_error_table(preds, coverage.dims);
  r.coverage = coverage;
  r.fairness = fairness_metrics(r.per_scg, coverage, min_count);
  if (!preds.vis_embeds.empty()) {
    r.grounding = grounding_metrics(preds.vis_embeds, preds.desc_embeds);
    r.has_grounding = true;
  }
  return r;
}

inline io::Json to_json(const MetricReport& r) {
  io::Json j;
  j["schema_version"] = kReportSchemaVersion;
  j["n_samples"] = r.n_samples;
  j["auroc"] = r.classification.auroc;
  j["pr_auc"] = r.classification.pr_auc;
  j["sens_at_95_spec"] = r.classification.sens_at_95_spec;
  j["balanced_accuracy"] = r.classification.balanced_accuracy;
  j["macro_f1"] = r.classification.macro_f1;
  j["ece"] = r.ece;
  j["fairness"] = {{"cdi", r.fairness.cdi},
                   {"tpr_w", r.fairness.tpr_w},
                   {"tpr_std", r.fairness.tpr_std},
                   {"eligible_scgs", r.fairness.eligible},
                   {"min_count", r.min_count}};
  if (r.has_grounding) j["grounding"] = {{"align_cos", r.grounding.align_cos}, {"r_at_1", r.grounding.r_at_1}};
  j["flags"] = {{"single_class", r.classification.single_class},
                {"s95_unattainable", r.classification.s95_unattainable},
                {"cdi_degenerate", r.fairness.cdi_degenerate},
                {"zero_embedding", r.grounding.zero_vector}};
  return j;
}

inline void write_report_csv(std::ostream& out, const MetricReport& r) {
  out << "metric,value\n";
  auto row = [&](const char* k, double v) { out << k << "," << io::fmt(v) << "\n"; };
  row("auroc", r.classification.auroc);
  row("pr_auc", r.classification.pr_auc);
  row("sens_at_95_spec", r.classification.sens_at_95_spec);
  row("balanced_accuracy", r.classification.balanced_accuracy);
  row("macro_f1", r.classification.macro_f1);
  row("ece", r.ece);
  row("cdi", r.fairness.cdi);
  row("tpr_w", r.fairness.tpr_w);
  row("tpr_std", r.fairness.tpr_std);
  if (r.has_grounding) {
    row("align_cos", r.grounding.align_cos);
    row("r_at_1", r.grounding.r_at_1);
  }
}

/// One row per eligible SCG.
inline size_t write_per_scg_csv(std::ostream& out, const MetricReport& r) {
  out << "class,descriptor,subgroup,coverage,tpr,error,weight\n";
  size_t rows = 0;
  for (const auto& g : enumerate_scgs(r.per_scg.dims)) {
    const auto& c = r.coverage.at(g);
    const auto& e = r.per_scg.at(g);
    if (!scg_eligible(c, e, r.min_count)) continue;
    out << g.class_id << "," << g.descriptor_id << "," << g.subgroup_id << "," << io::fmt(c.coverage) << ","
        << io::fmt(e.tpr) << "," << io::fmt(e.error) << "," << io::fmt(e.effective_weight) << "\n";
    ++rows;
  }
  return rows;
}

}  // namespace semcov
