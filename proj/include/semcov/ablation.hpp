#pragma once

// Architecture ablation grid: SDM variant x ordering at depth 3, then depth
// 1..6 x feedback on/off for one variant. Duplicate configurations run once.

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "semcov/data.hpp"
#include "semcov/encoder.hpp"
#include "semcov/trainer.hpp"

namespace semcov {

struct AblationRun {
  std::string group;  // "sdm_x_ordering" or "depth_x_feedback"
  EncoderConfig encoder;
};

inline bool same_architecture(const EncoderConfig& a, const EncoderConfig& b) {
  return a.sdm_variant == b.sdm_variant && a.ordering == b.ordering && a.n_layers == b.n_layers && a.feedback == b.feedback;
}

inline std::vector<AblationRun> ablation_grid(const EncoderConfig& base, int grid_depth = 3, int max_depth = 6) {
  std::vector<AblationRun> runs;
  for (auto v : kAllSdmVariants)
    for (auto o : kAllOrderings) {
      EncoderConfig e = base;
      e.sdm_variant = v;
      e.ordering = o;
      e.n_layers = grid_depth;
      runs.push_back({"sdm_x_ordering", e});
    }
  for (int depth = 1; depth <= max_depth; ++depth)
    for (bool fb : {true, false}) {
      EncoderConfig e = base;
      e.n_layers = depth;
      e.feedback = fb;
      bool dup = false;
      for (const auto& r : runs) dup = dup || same_architecture(r.encoder, e);
      if (!dup) runs.push_back({"depth_x_feedback", e});
    }
  return runs;
}

struct AblationRow {
  std::string group;
  EncoderConfig encoder;
  bool finite = true;
  std::string error;
  int best_epoch = 0, stopped_epoch = 0;
  double final_loss = NAN;
  double auroc = NAN, pr_auc = NAN, s95 = NAN, bacc = NAN, macro_f1 = NAN, ece = NAN;
  double cdi = NAN, tpr_w = NAN, tpr_std = NAN;
};

using AblationCallback = std::function<void(size_t index, size_t total, const AblationRow&)>;

/// Trains every grid entry on the same split and scores it on `test`.
/// A non-finite loss marks the row and the grid continues.
inline std::vector<AblationRow> run_ablation(const std::vector<AblationRun>& runs, const Dataset& train_set,
                                             const Dataset& val_set, const Dataset& test_set, const TrainConfig& base,
                                             size_t min_count = 5, const AblationCallback& on_row = {}) {
  std::vector<AblationRow> rows;
  for (size_t i = 0; i < runs.size(); ++i) {
    AblationRow row;
    row.group = runs[i].group;
    row.encoder = runs[i].encoder;
    TrainConfig cfg = base;
    cfg.encoder = runs[i].encoder;
    try {
      const auto res = train(train_set, val_set, cfg);
      row.best_epoch = res.best_epoch;
      row.stopped_epoch = res.stopped_epoch;
      row.final_loss = res.history.back().total;
      const auto rep = evaluate(res.best, test_set, min_count);
      row.auroc = rep.classification.auroc;
      row.pr_auc = rep.classification.pr_auc;
      row.s95 = rep.classification.sens_at_95_spec;
      row.bacc = rep.classification.balanced_accuracy;
      row.macro_f1 = rep.classification.macro_f1;
      row.ece = rep.ece;
      row.cdi = rep.fairness.cdi;
      row.tpr_w = rep.fairness.tpr_w;
      row.tpr_std = rep.fairness.tpr_std;
      row.finite = std::isfinite(row.final_loss);
    } catch (const TrainingError& e) {
      row.finite = false;
      row.error = e.what();
    }
    rows.push_back(row);
    if (on_row) on_row(i, runs.size(), row);
  }
  return rows;
}

inline constexpr const char* kAblationHeader =
    "run,group,sdm_variant,ordering,n_layers,feedback,finite,best_epoch,stopped_epoch,final_loss,auroc,pr_auc,"
    "sens_at_95_spec,balanced_accuracy,macro_f1,ece,cdi,tpr_w,tpr_std";

inline void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << kAblationHeader << "\n";
  auto num = [](double v) { return std::isfinite(v) ? io::fmt_fixed(v, 6) : std::string("nan"); };
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    out << i + 1 << "," << r.group << "," << to_string(r.encoder.sdm_variant) << "," << to_string(r.encoder.ordering) << ","
        << r.encoder.n_layers << "," << (r.encoder.feedback ? "on" : "off") << "," << (r.finite ? "true" : "false") << ","
        << r.best_epoch << "," << r.stopped_epoch << "," << num(r.final_loss) << "," << num(r.auroc) << ","
        << num(r.pr_auc) << "," << num(r.s95) << "," << num(r.bacc) << "," << num(r.macro_f1) << "," << num(r.ece) << ","
        << num(r.cdi) << "," << num(r.tpr_w) << "," << num(r.tpr_std) << "\n";
  }
}

}  // namespace semcov
