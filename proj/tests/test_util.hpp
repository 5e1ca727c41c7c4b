#pragma once

// Shared fixtures for the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "semcov/semcov.hpp"

namespace semcov::fx {

template <typename T = double>
Var<T> tensor(Shape shape, const std::vector<double>& values) {
  Array<T> a(static_cast<int64_t>(values.size()));
  for (size_t i = 0; i < values.size(); ++i) a(static_cast<int64_t>(i)) = static_cast<T>(values[i]);
  return Var<T>::constant(std::move(shape), std::move(a));
}

template <typename T = double>
Var<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Array<T> a(ag::numel(shape));
  for (auto& v : a) v = static_cast<T>(rng.uniform(lo, hi));
  return Var<T>::constant(std::move(shape), std::move(a));
}

template <typename T>
std::vector<double> values(const Var<T>& v) {
  std::vector<double> out(static_cast<size_t>(v.size()));
  for (int64_t i = 0; i < v.size(); ++i) out[static_cast<size_t>(i)] = static_cast<double>(v.value()(i));
  return out;
}

struct Row {
  int cls, sub;
  std::vector<double> p;
};

/// Descriptor-only dataset with blank images.
inline Dataset make_dataset(const std::vector<Row>& rows, int K, int T, int S, int channels = 3, int side = 16) {
  Dataset ds;
  ds.config = {K, T, S, channels, side, side};
  for (size_t i = 0; i < rows.size(); ++i) {
    Sample s;
    s.sample_id = "r" + std::to_string(i);
    s.class_label = rows[i].cls;
    s.subgroup = rows[i].sub;
    s.descriptors = DescriptorVector(rows[i].p);
    s.image.assign(static_cast<size_t>(ds.config.image_size()), 0.0f);
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

/// The 4-sample fixture: K=2, T=1, S=1.
inline Dataset coverage_fixture() {
  return make_dataset({{0, 0, {0.1, 0.9}}, {0, 0, {0.3, 0.7}}, {0, 0, {0.5, 0.5}}, {0, 0, {0.1, 0.9}}}, 2, 1, 1);
}

/// Tiny encoder dims used by the gradient checks.
inline EncoderConfig gradcheck_config(SdmVariant v, Ordering o) {
  EncoderConfig c;
  c.K = 3;
  c.T = 2;
  c.C_f = 8;
  c.H_f = c.W_f = 4;
  c.D = 16;
  c.n_heads = 4;
  c.E = 16;
  c.n_layers = 2;
  c.sdm_variant = v;
  c.ordering = o;
  return c;
}

/// Fixed batch of B=4 for a gradcheck_config model.
struct GradBatch {
  std::vector<double> x, p;
  BatchContext<double> ctx;  // labels, subgroups, descriptors, dims only
  CoverageTable coverage;
};

inline GradBatch make_grad_batch(const EncoderConfig& c, uint64_t seed = 5) {
  Rng rng(seed);
  GradBatch b;
  const int B = 4, side = c.image_height();
  b.x.resize(static_cast<size_t>(B) * c.image_channels * side * side);
  for (auto& v : b.x) v = rng.normal();
  b.ctx.dims = {c.T, c.K, 2};
  for (int i = 0; i < B; ++i) {
    b.ctx.labels.push_back(i % 2);
    b.ctx.subgroups.push_back((i / 2) % 2);
    std::vector<double> d;
    for (int k = 0; k < c.K; ++k) {
      d.push_back(rng.uniform());
      b.p.push_back(d.back());
    }
    b.ctx.descriptors.push_back(d);
  }
  b.coverage.dims = b.ctx.dims;
  for (size_t g = 0; g < b.ctx.dims.count(); ++g) b.coverage.entries.push_back({rng.uniform(), 10});
  return b;
}

template <typename T>
std::function<Var<T>()> joint_loss(const Model<T>& m, const GradBatch& b, double cdi_min_weight = 0.1) {
  const auto& c = m.config();
  const int B = static_cast<int>(b.ctx.labels.size()), side = c.image_height();
  auto x = tensor<T>({B, c.image_channels, side, side}, b.x);
  auto p = tensor<T>({B, c.K}, b.p);
  return [&m, &b, x, p, cdi_min_weight]() {
    auto out = m.forward(x, p, {true, false});
    BatchContext<T> ctx;
    ctx.labels = b.ctx.labels;
    ctx.subgroups = b.ctx.subgroups;
    ctx.descriptors = b.ctx.descriptors;
    ctx.dims = b.ctx.dims;
    ctx.p = p;
    ctx.class_logits = out.class_logits;
    ctx.descriptor_logits = out.descriptor_logits;
    ctx.pooled = out.pooled;
    return total_loss(ctx, b.coverage, m.dva, LossWeights{}, cdi_min_weight).total;
  };
}

/// Analytic gradients in double against central differences evaluated in
/// long double on an identical copy of the model.
inline GradCheckResult full_model_gradcheck(const EncoderConfig& c, size_t coords_per_group = 200, double eps = 1e-6,
                                            uint64_t seed = 3) {
  Model<double> m(c, seed);
  Model<long double> ml(c, seed);
  auto pa = m.trainable();
  auto pf = ml.trainable();
  for (size_t k = 0; k < pa.size(); ++k) pf[k].var.mutable_value() = pa[k].var.value().template cast<long double>();
  const auto batch = make_grad_batch(c);
  auto fa = joint_loss<double>(m, batch);
  auto ff = joint_loss<long double>(ml, batch);
  Rng rng(1);
  return gradient_check<double, long double>(fa, pa, ff, pf, eps, rng, coords_per_group);
}

/// Mixed-precision check of a fixture type: `Fx<T>(args...)` must build
/// identical parameters for every T and expose `params()` and `loss()`.
template <template <typename> class Fx, typename... Args>
GradCheckResult mixed_gradcheck(double eps, size_t coords, const Args&... args) {
  Fx<double> a(args...);
  Fx<long double> f(args...);
  auto pa = a.params();
  auto pf = f.params();
  std::function<Var<double>()> la = [&a] { return a.loss(); };
  std::function<Var<long double>()> lf = [&f] { return f.loss(); };
  Rng rng(1);
  return gradient_check<double, long double>(la, pa, lf, pf, eps, rng, coords);
}

// ---------------------------------------------------------------------------
// Brute-force metric oracles: every threshold is evaluated by direct counting.

struct Counts {
  double tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Counts count_at(const std::vector<double>& s, const std::vector<int>& y, double thr) {
  Counts c;
  for (size_t i = 0; i < s.size(); ++i) {
    const bool pred = s[i] >= thr;
    if (y[i]) (pred ? c.tp : c.fn) += 1;
    else (pred ? c.fp : c.tn) += 1;
  }
  return c;
}

/// Candidate thresholds: every distinct score, descending, then +inf first.
inline std::vector<double> sweep_thresholds(const std::vector<double>& s) {
  std::vector<double> t(s);
  std::sort(t.begin(), t.end(), std::greater<>());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  t.insert(t.begin(), std::numeric_limits<double>::infinity());
  return t;
}

/// Trapezoidal area under the ROC polyline traced by the sweep.
inline double sweep_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  double area = 0, px = 0, py = 0;
  for (double t : sweep_thresholds(s)) {
    const auto c = count_at(s, y, t);
    const double x = c.fp / (c.fp + c.tn), yv = c.tp / (c.tp + c.fn);
    area += (x - px) * (yv + py) / 2;
    px = x;
    py = yv;
  }
  return area;
}

/// Σ (R_k − R_{k−1}) P_k over descending thresholds.
inline double sweep_average_precision(const std::vector<double>& s, const std::vector<int>& y) {
  double ap = 0, prev = 0;
  for (double t : sweep_thresholds(s)) {
    const auto c = count_at(s, y, t);
    if (c.tp + c.fp == 0) continue;
    const double r = c.tp / (c.tp + c.fn);
    ap += (r - prev) * c.tp / (c.tp + c.fp);
    prev = r;
  }
  return ap;
}

inline double sweep_sens_at_spec(const std::vector<double>& s, const std::vector<int>& y, double spec) {
  double best = 0;
  for (double t : sweep_thresholds(s)) {
    const auto c = count_at(s, y, t);
    if (c.tn / (c.tn + c.fp) >= spec) best = std::max(best, c.tp / (c.tp + c.fn));
  }
  return best;
}

/// Binary confusion-matrix metrics for hard decisions.
inline double confusion_balanced_accuracy(const std::vector<int>& y, const std::vector<int>& pred) {
  const auto c = count_at(std::vector<double>(pred.begin(), pred.end()), y, 0.5);
  return 0.5 * (c.tp / (c.tp + c.fn) + c.tn / (c.tn + c.fp));
}

inline double confusion_macro_f1(const std::vector<int>& y, const std::vector<int>& pred) {
  const auto c = count_at(std::vector<double>(pred.begin(), pred.end()), y, 0.5);
  const double f1_pos = 2 * c.tp / (2 * c.tp + c.fp + c.fn);
  const double f1_neg = 2 * c.tn / (2 * c.tn + c.fn + c.fp);
  return 0.5 * (f1_pos + f1_neg);
}

/// The 8-sample binary fixture.
inline const std::vector<double>& fixture_scores() {
  static const std::vector<double> s{0.1, 0.2, 0.3, 0.4, 0.6, 0.7, 0.8, 0.9};
  return s;
}
inline const std::vector<int>& fixture_labels() {
  static const std::vector<int> y{0, 0, 1, 0, 1, 1, 0, 1};
  return y;
}

inline PredictionSet binary_predictions(const std::vector<double>& s, const std::vector<int>& y) {
  PredictionSet ps;
  for (size_t i = 0; i < s.size(); ++i) {
    ps.probs.push_back({1.0 - s[i], s[i]});
    ps.labels.push_back(y[i]);
  }
  return ps;
}

/// T=3 calibration fixture: confidences 0.4 (hit), 0.45 (miss), 0.9 (hit),
/// 0.7 (miss). Two bins give 0.5·|0.5 − 0.425| + 0.5·|0.5 − 0.8| = 0.1875.
inline PredictionSet ece_fixture() {
  PredictionSet ps;
  ps.probs = {{0.4, 0.3, 0.3}, {0.2, 0.45, 0.35}, {0.9, 0.05, 0.05}, {0.1, 0.7, 0.2}};
  ps.labels = {0, 2, 0, 0};
  return ps;
}

}  // namespace semcov::fx
