#pragma once

// Training loop (Adam, warm-up plus cosine schedule, early stopping on
// validation AUROC), per-epoch validation CDI, prediction and evaluation.

#include <cmath>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "semcov/checkpoint.hpp"
#include "semcov/coverage.hpp"
#include "semcov/data.hpp"
#include "semcov/metrics.hpp"
#include "semcov/model.hpp"
#include "semcov/objectives.hpp"

namespace semcov {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double base_lr = 2e-4;
  int warmup_epochs = 1;
  int patience = 10;
  double early_stop_tol = 1e-4;
  uint64_t seed = 1;
  LossWeights weights;
  double cdi_min_weight = 0.5;
  size_t val_cdi_min_count = 5;
  EncoderConfig encoder;
  bool dva_symmetric = false;
  /// Epochs of alignment-head-only training on the frozen encoder after the
  /// main run (0 disables).
  int grounding_probe_epochs = 0;
  double probe_lr = 1e-3;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (!(base_lr > 0)) throw ConfigError("base_lr must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
    if (grounding_probe_epochs < 0 || !(probe_lr > 0)) throw ConfigError("invalid probe settings");
    if (!(cdi_min_weight >= 0)) throw ConfigError("cdi_min_weight must be >= 0");
    weights.validate();
    encoder.validate();
  }
};

inline io::Json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"base_lr", c.base_lr},
          {"warmup_epochs", c.warmup_epochs},
          {"patience", c.patience},
          {"early_stop_tol", c.early_stop_tol},
          {"seed", c.seed},
          {"lambda_desc", c.weights.lambda_desc},
          {"lambda_dva", c.weights.lambda_dva},
          {"lambda_cdi", c.weights.lambda_cdi},
          {"cdi_min_weight", c.cdi_min_weight},
          {"val_cdi_min_count", c.val_cdi_min_count},
          {"dva_symmetric", c.dva_symmetric},
          {"grounding_probe_epochs", c.grounding_probe_epochs},
          {"probe_lr", c.probe_lr},
          {"encoder", to_json(c.encoder)}};
}

/// Reads a config object; unknown keys are rejected.
inline TrainConfig train_config_from_json(const io::Json& j, TrainConfig c = {}) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      const auto& v = it.value();
      if (k == "epochs") c.epochs = v.get<int>();
      else if (k == "batch_size") c.batch_size = v.get<int>();
      else if (k == "base_lr") c.base_lr = v.get<double>();
      else if (k == "warmup_epochs") c.warmup_epochs = v.get<int>();
      else if (k == "patience") c.patience = v.get<int>();
      else if (k == "early_stop_tol") c.early_stop_tol = v.get<double>();
      else if (k == "seed") c.seed = v.get<uint64_t>();
      else if (k == "lambda_desc") c.weights.lambda_desc = v.get<double>();
      else if (k == "lambda_dva") c.weights.lambda_dva = v.get<double>();
      else if (k == "lambda_cdi") c.weights.lambda_cdi = v.get<double>();
      else if (k == "cdi_min_weight") c.cdi_min_weight = v.get<double>();
      else if (k == "val_cdi_min_count") c.val_cdi_min_count = v.get<size_t>();
      else if (k == "dva_symmetric") c.dva_symmetric = v.get<bool>();
      else if (k == "grounding_probe_epochs") c.grounding_probe_epochs = v.get<int>();
      else if (k == "probe_lr") c.probe_lr = v.get<double>();
      else if (k == "encoder") c.encoder = encoder_config_from_json(v, c.encoder);
      else throw ConfigError("unknown config key \"" + k + "\"");
    }
  } catch (const io::Json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return c;
}

/// Step-indexed schedule: base/10 during warm-up, then cosine from base to 0
/// at the final step.
struct LrSchedule {
  double base_lr = 2e-4;
  long warmup_steps = 0;
  long total_steps = 1;

  double operator()(long step) const {
    if (step < warmup_steps) return base_lr / 10.0;
    const double span = static_cast<double>(std::max<long>(1, total_steps - warmup_steps - 1));
    const double t = std::min(1.0, static_cast<double>(step - warmup_steps) / span);
    return 0.5 * base_lr * (1.0 + std::cos(M_PI * t));
  }
};

template <typename T>
class Adam {
 public:
  Adam(ParamList<T> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.push_back(Array<T>::Zero(p.var.size()));
      v_.push_back(Array<T>::Zero(p.var.size()));
    }
  }
  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }
  void step(double lr) {
    ++t_;
    const T c1 = static_cast<T>(1.0 - std::pow(b1_, t_));
    const T c2 = static_cast<T>(1.0 - std::pow(b2_, t_));
    const T b1 = static_cast<T>(b1_), b2 = static_cast<T>(b2_);
    for (size_t i = 0; i < params_.size(); ++i) {
      auto* node = params_[i].var.node();
      if (!node->grad.size()) continue;
      m_[i] = b1 * m_[i] + (T(1) - b1) * node->grad;
      v_[i] = b2 * v_[i] + (T(1) - b2) * node->grad.square();
      node->value -= static_cast<T>(lr) * (m_[i] / c1) / ((v_[i] / c2).sqrt() + static_cast<T>(eps_));
    }
  }

 private:
  ParamList<T> params_;
  std::vector<Array<T>> m_, v_;
  double b1_, b2_, eps_;
  long t_ = 0;
};

template <typename T>
struct Batch {
  Var<T> x, p;
  std::vector<int> labels, subgroups;
  std::vector<std::vector<double>> descriptors;
};

template <typename T>
Batch<T> make_batch(const Dataset& ds, const std::vector<size_t>& idx, size_t begin, size_t end) {
  const auto& c = ds.config;
  const int B = static_cast<int>(end - begin);
  Array<T> x(static_cast<int64_t>(B) * c.image_size()), p(static_cast<int64_t>(B) * c.K);
  Batch<T> b;
  for (int i = 0; i < B; ++i) {
    const auto& s = ds.samples[idx[begin + i]];
    for (int64_t k = 0; k < c.image_size(); ++k) x(i * c.image_size() + k) = static_cast<T>(s.image[k]);
    for (int k = 0; k < c.K; ++k) p(static_cast<int64_t>(i) * c.K + k) = static_cast<T>(s.descriptors[k]);
    b.labels.push_back(s.class_label);
    b.subgroups.push_back(s.subgroup);
    b.descriptors.push_back(s.descriptors.values());
  }
  b.x = Var<T>::constant(Shape{B, c.channels, c.height, c.width}, std::move(x));
  b.p = Var<T>::constant(Shape{B, c.K}, std::move(p));
  return b;
}

inline void check_compatible(const EncoderConfig& e, const DatasetConfig& d) {
  if (e.K != d.K || e.T != d.T || e.image_channels != d.channels || e.image_height() != d.height ||
      e.image_width() != d.width)
    throw ConfigError("model expects K=" + std::to_string(e.K) + " T=" + std::to_string(e.T) + " image " +
                      std::to_string(e.image_channels) + "x" + std::to_string(e.image_height()) + "x" +
                      std::to_string(e.image_width()) + ", dataset has K=" + std::to_string(d.K) + " T=" +
                      std::to_string(d.T) + " image " + std::to_string(d.channels) + "x" + std::to_string(d.height) +
                      "x" + std::to_string(d.width));
}

/// Eval-mode predictions with alignment embeddings.
template <typename T>
PredictionSet predict(const Model<T>& model, const Dataset& ds, int batch_size = 64) {
  check_compatible(model.config(), ds.config);
  ag::NoGradGuard guard;
  PredictionSet ps;
  std::vector<size_t> idx(ds.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (size_t b0 = 0; b0 < idx.size(); b0 += batch_size) {
    const size_t b1 = std::min(idx.size(), b0 + static_cast<size_t>(batch_size));
    auto batch = make_batch<T>(ds, idx, b0, b1);
    auto out = model.forward(batch.x, batch.p, {false, false});
    auto v = model.dva.visual_embedding(out.pooled);
    auto d = model.dva.descriptor_embedding(batch.p);
    const int Tn = out.class_logits.dim(1), E = v.dim(1);
    for (size_t i = 0; i < b1 - b0; ++i) {
      std::vector<double> logit(Tn), prob(Tn);
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < Tn; ++c) mx = std::max(mx, logit[c] = out.class_logits.value()(i * Tn + c));
      double z = 0;
      for (int c = 0; c < Tn; ++c) z += prob[c] = std::exp(logit[c] - mx);
      for (auto& q : prob) q /= z;
      ps.probs.push_back(std::move(prob));
      std::vector<double> ve(E), de(E);
      for (int e = 0; e < E; ++e) {
        ve[e] = v.value()(i * E + e);
        de[e] = d.value()(i * E + e);
      }
      ps.vis_embeds.push_back(std::move(ve));
      ps.desc_embeds.push_back(std::move(de));
    }
    ps.labels.insert(ps.labels.end(), batch.labels.begin(), batch.labels.end());
    ps.subgroups.insert(ps.subgroups.end(), batch.subgroups.begin(), batch.subgroups.end());
    ps.descriptors.insert(ps.descriptors.end(), batch.descriptors.begin(), batch.descriptors.end());
  }
  return ps;
}

struct StepRecord {
  long step = 0;
  int epoch = 0;
  double cls = 0, desc = 0, dva = 0, cdi = 0, total = 0, lr = 0;
};

struct EpochRecord {
  int epoch = 0;
  double cls = 0, desc = 0, dva = 0, cdi = 0, total = 0;  // epoch means
  double val_auroc = 0.5;
  double val_cdi = 0;
  bool val_cdi_defined = false;
};

struct TrainResult {
  Checkpoint<float> best;
  std::vector<EpochRecord> history;
  std::vector<StepRecord> steps;
  int best_epoch = 0;
  int stopped_epoch = 0;
};

/// Validation CDI with hard decisions against the training coverage.
struct ValidationScores {
  double auroc = 0.5;
  double cdi = 0;
  bool cdi_defined = false;
};

inline ValidationScores validation_scores(const PredictionSet& ps, const CoverageTable& train_cov, size_t min_count) {
  ValidationScores v;
  v.auroc = classification_metrics(ps).auroc;
  const auto err = evaluation_error_table(ps, train_cov.dims);
  try {
    v.cdi = cdi(train_cov, err, min_count).cdi;
    v.cdi_defined = true;
  } catch (const DiagnosticError&) {
  }
  return v;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains alignment heads alone on frozen pooled features.
inline void grounding_probe(Model<float>& model, const Dataset& train, const TrainConfig& cfg) {
  std::vector<size_t> idx(train.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<Array<float>> pooled;
  std::vector<Var<float>> ps;
  {
    ag::NoGradGuard guard;
    for (size_t b0 = 0; b0 < idx.size(); b0 += cfg.batch_size) {
      const size_t b1 = std::min(idx.size(), b0 + static_cast<size_t>(cfg.batch_size));
      auto batch = make_batch<float>(train, idx, b0, b1);
      pooled.push_back(model.forward(batch.x, batch.p, {false, false}).pooled.value());
      ps.push_back(batch.p);
    }
  }
  ParamList<float> heads;
  model.dva.collect("dva.", heads);
  Adam<float> opt(heads);
  Rng rng(cfg.seed ^ 0x5EEDu);
  std::vector<size_t> order(pooled.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  const int C = model.config().C_f;
  for (int e = 0; e < cfg.grounding_probe_epochs; ++e) {
    rng.shuffle(order.begin(), order.end());
    for (size_t k : order) {
      const int B = static_cast<int>(pooled[k].size() / C);
      auto z = Var<float>::constant(Shape{B, C}, pooled[k]);
      opt.zero_grad();
      auto loss = dva_loss(z, ps[k], model.dva);
      ag::backward(loss);
      opt.step(cfg.probe_lr);
    }
  }
}

inline TrainResult train(const Dataset& ds_train, const Dataset& ds_val, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (ds_train.empty() || ds_val.empty()) throw ConfigError("training and validation sets must be non-empty");
  check_compatible(cfg.encoder, ds_train.config);
  check_compatible(cfg.encoder, ds_val.config);

  const CoverageTable train_cov = coverage_table(ds_train, CoverageMode::Soft);
  Model<float> model(cfg.encoder, cfg.seed, cfg.dva_symmetric);
  auto params = model.trainable();
  Adam<float> opt(params);

  const long steps_per_epoch = static_cast<long>((ds_train.size() + cfg.batch_size - 1) / cfg.batch_size);
  LrSchedule sched{cfg.base_lr, cfg.warmup_epochs * steps_per_epoch, cfg.epochs * steps_per_epoch};

  TrainResult res;
  Rng rng(cfg.seed ^ 0xDA7Au);
  std::vector<size_t> order(ds_train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  double best_auroc = -1;
  int wait = 0;
  std::vector<Array<float>> best_values;
  long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    EpochRecord rec;
    rec.epoch = epoch + 1;
    long n_steps = 0;
    for (size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size, ++step, ++n_steps) {
      const size_t b1 = std::min(order.size(), b0 + static_cast<size_t>(cfg.batch_size));
      auto batch = make_batch<float>(ds_train, order, b0, b1);
      auto out = model.forward(batch.x, batch.p, {true, false});
      BatchContext<float> ctx{batch.labels, batch.subgroups, batch.descriptors, batch.p,
                              out.class_logits, out.descriptor_logits, out.pooled, train_cov.dims};
      auto L = total_loss(ctx, train_cov, model.dva, cfg.weights, cfg.cdi_min_weight);
      if (!std::isfinite(L.total_value())) throw TrainingError("non-finite loss", step);
      opt.zero_grad();
      ag::backward(L.total);
      const double lr = sched(step);
      opt.step(lr);
      res.steps.push_back({step, epoch + 1, L.cls, L.desc, L.dva, L.cdi, L.total_value(), lr});
      rec.cls += L.cls;
      rec.desc += L.desc;
      rec.dva += L.dva;
      rec.cdi += L.cdi;
      rec.total += L.total_value();
    }
    for (double* v : {&rec.cls, &rec.desc, &rec.dva, &rec.cdi, &rec.total}) *v /= static_cast<double>(n_steps);

    const auto val = validation_scores(predict(model, ds_val), train_cov, cfg.val_cdi_min_count);
    rec.val_auroc = val.auroc;
    rec.val_cdi = val.cdi;
    rec.val_cdi_defined = val.cdi_defined;
    res.history.push_back(rec);
    res.stopped_epoch = epoch + 1;
    if (on_epoch) on_epoch(rec);

    if (val.auroc > best_auroc + cfg.early_stop_tol || best_values.empty()) {
      best_auroc = val.auroc;
      best_values = snapshot(model.all_parameters());
      res.best_epoch = epoch + 1;
      wait = 0;
    } else if (++wait >= cfg.patience) {
      break;
    }
  }
  auto all = model.all_parameters();
  restore(all, best_values);
  if (cfg.grounding_probe_epochs > 0) grounding_probe(model, ds_train, cfg);

  res.best.model = model;
  res.best.training_coverage = train_cov;
  res.best.extra = {{"train_config", to_json(cfg)}, {"best_epoch", res.best_epoch}, {"stopped_epoch", res.stopped_epoch}};
  return res;
}

/// Full report; per-SCG errors are paired with the checkpoint's training
/// coverage when present, else with the evaluated set's own coverage.
template <typename T>
MetricReport evaluate(const Checkpoint<T>& ck, const Dataset& ds, size_t min_count = 1) {
  check_compatible(ck.model.config(), ds.config);
  const auto cov = ck.training_coverage ? *ck.training_coverage : coverage_table(ds, CoverageMode::Soft);
  if (!(cov.dims == ScgDims::of(ds.config))) throw ConfigError("coverage table dims do not match dataset");
  return build_report(predict(ck.model, ds), cov, min_count);
}

/// One CSV: step rows leave val_* empty; epoch rows leave step and losses'
/// step fields empty except the epoch means.
inline void write_training_log(std::ostream& out, const TrainResult& r) {
  out << "epoch,step,L_cls,L_desc,L_DVA,L_CDI,total,lr,val_auroc,val_cdi\n";
  size_t si = 0;
  for (const auto& e : r.history) {
    for (; si < r.steps.size() && r.steps[si].epoch == e.epoch; ++si) {
      const auto& s = r.steps[si];
      out << s.epoch << "," << s.step << "," << io::fmt(s.cls) << "," << io::fmt(s.desc) << "," << io::fmt(s.dva) << ","
          << io::fmt(s.cdi) << "," << io::fmt(s.total) << "," << io::fmt(s.lr) << ",,\n";
    }
    out << e.epoch << ",," << io::fmt(e.cls) << "," << io::fmt(e.desc) << "," << io::fmt(e.dva) << "," << io::fmt(e.cdi)
        << "," << io::fmt(e.total) << ",," << io::fmt(e.val_auroc) << "," << (e.val_cdi_defined ? io::fmt(e.val_cdi) : "")
        << "\n";
  }
}

/// Epoch rows of a training log (rows whose step field is empty).
inline std::vector<EpochRecord> read_training_log(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || io::trim(line).rfind("epoch,step,", 0) != 0) throw ParseError("not a training log", 0);
  std::vector<EpochRecord> out;
  long row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (io::trim(line).empty()) continue;
    const auto c = io::split_csv_line(line);
    if (c.size() != 10) throw ParseError("expected 10 fields", row);
    if (!io::trim(c[1]).empty()) continue;
    EpochRecord e;
    long ep = 0;
    if (!io::parse_long(io::trim(c[0]), ep)) throw ParseError("bad epoch", row, "epoch");
    e.epoch = static_cast<int>(ep);
    double* fields[] = {&e.cls, &e.desc, &e.dva, &e.cdi, &e.total};
    for (int k = 0; k < 5; ++k)
      if (!io::parse_double(io::trim(c[2 + k]), *fields[k])) throw ParseError("bad loss value", row);
    if (!io::parse_double(io::trim(c[8]), e.val_auroc)) throw ParseError("bad value", row, "val_auroc");
    e.val_cdi_defined = io::parse_double(io::trim(c[9]), e.val_cdi);
    out.push_back(e);
  }
  return out;
}

}  // namespace semcov
