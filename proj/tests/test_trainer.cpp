#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "semcov/semcov.hpp"
#include "test_util.hpp"

using namespace semcov;

namespace {

struct TinySplit {
  Preset preset;
  SplitResult split;
};

const TinySplit& tiny() {
  static const TinySplit t = [] {
    TinySplit s{make_preset("tiny", 3), {}};
    s.split = split_dataset(generate_synthetic_dataset(s.preset.synth), s.preset.ratios, false, 3);
    return s;
  }();
  return t;
}

}  // namespace

TEST(Schedule, WarmupThenCosine) {
  const LrSchedule s{2e-4, 10, 100};
  EXPECT_DOUBLE_EQ(s(0), 2e-5);
  EXPECT_DOUBLE_EQ(s(9), 2e-5);
  EXPECT_DOUBLE_EQ(s(10), 2e-4);
  EXPECT_LE(s(99), 1e-3 * 2e-4);
  for (long k = 11; k < 100; ++k) EXPECT_LE(s(k), s(k - 1));
}

TEST(Config, JsonRoundTripAndStrictKeys) {
  TrainConfig c;
  c.epochs = 7;
  c.weights.lambda_cdi = 0.3;
  c.encoder.ordering = Ordering::MixtureGated;
  c.encoder.sdm_variant = SdmVariant::HybridMul;
  const auto back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
  EXPECT_THROW(train_config_from_json(io::Json{{"epoch", 3}}), ConfigError);
  EXPECT_THROW(train_config_from_json(io::Json{{"epochs", "many"}}), ConfigError);
  EXPECT_THROW(train_config_from_json(io::Json{{"encoder", {{"ordering", "sideways"}}}}), ConfigError);
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, OneEpochSmoke) {
  auto cfg = tiny().preset.train;
  cfg.epochs = 1;
  const auto res = train(tiny().split.train, tiny().split.val, cfg);
  ASSERT_EQ(res.history.size(), 1u);
  EXPECT_EQ(res.best_epoch, 1);
  EXPECT_TRUE(std::isfinite(res.history[0].total));

  const auto path = std::filesystem::temp_directory_path() / "semcov_test_trainer.ckpt";
  save_checkpoint(path.string(), res.best);
  const auto ck = load_checkpoint<float>(path.string());
  std::filesystem::remove(path);
  const auto a = to_json(evaluate(res.best, tiny().split.test)).dump();
  const auto b = to_json(evaluate(ck, tiny().split.test)).dump();
  EXPECT_EQ(a, b);
}

TEST(Train, DeterministicGivenSeed) {
  auto cfg = tiny().preset.train;
  cfg.epochs = 1;
  const auto a = train(tiny().split.train, tiny().split.val, cfg);
  const auto b = train(tiny().split.train, tiny().split.val, cfg);
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (size_t i = 0; i < a.steps.size(); ++i) EXPECT_EQ(a.steps[i].total, b.steps[i].total);
}

TEST(Train, StepZeroUsesTenthOfBaseRate) {
  auto cfg = tiny().preset.train;
  cfg.epochs = 2;
  const auto res = train(tiny().split.train, tiny().split.val, cfg);
  ASSERT_FALSE(res.steps.empty());
  EXPECT_DOUBLE_EQ(res.steps.front().lr, cfg.base_lr / 10);
  EXPECT_LE(res.steps.back().lr, 1e-3 * cfg.base_lr);
}

TEST(Train, EarlyStoppingBound) {
  auto cfg = tiny().preset.train;
  cfg.epochs = 6;
  cfg.patience = 1;
  cfg.early_stop_tol = 1.0;  // nothing improves by a full AUROC unit
  const auto res = train(tiny().split.train, tiny().split.val, cfg);
  EXPECT_EQ(res.best_epoch, 1);
  EXPECT_LE(res.stopped_epoch, res.best_epoch + cfg.patience);
}

TEST(Train, IncompatibleDatasetIsRejected) {
  auto cfg = tiny().preset.train;
  cfg.encoder.K = 5;
  EXPECT_THROW(train(tiny().split.train, tiny().split.val, cfg), ConfigError);
}

TEST(Evaluate, MemorizedSetHasPerfectAuroc) {
  const auto& tr = tiny().split.train;
  std::vector<size_t> idx;
  int per_class[2] = {0, 0};
  for (size_t i = 0; i < tr.size() && idx.size() < 8; ++i)
    if (per_class[tr.samples[i].class_label] < 4) {
      ++per_class[tr.samples[i].class_label];
      idx.push_back(i);
    }
  const auto eight = tr.subset(idx);
  auto cfg = tiny().preset.train;
  cfg.epochs = 60;
  cfg.batch_size = 8;
  cfg.base_lr = 3e-3;
  cfg.patience = 60;
  cfg.warmup_epochs = 0;
  const auto res = train(eight, eight, cfg);
  EXPECT_EQ(evaluate(res.best, eight).classification.auroc, 1.0);
}

TEST(Evaluate, ReportJsonRoundTripsByteExact) {
  auto cfg = tiny().preset.train;
  cfg.epochs = 1;
  const auto res = train(tiny().split.train, tiny().split.val, cfg);
  const auto text = to_json(evaluate(res.best, tiny().split.test)).dump(2);
  EXPECT_EQ(io::Json::parse(text).dump(2), text);
}

TEST(Evaluate, PerScgRowsMatchAuditEligibility) {
  auto cfg = tiny().preset.train;
  cfg.epochs = 1;
  const auto res = train(tiny().split.train, tiny().split.val, cfg);
  const auto& test = tiny().split.test;
  for (size_t min_count : {1u, 3u}) {
    const auto rep = evaluate(res.best, test, min_count);
    std::ostringstream csv;
    const size_t rows = write_per_scg_csv(csv, rep);
    // Audit side: training coverage against the test split's own error table.
    const auto preds = predict(res.best.model, test);
    const auto err = evaluation_error_table(preds, ScgDims::of(test.config));
    const auto audit = cdi(*res.best.training_coverage, err, min_count);
    EXPECT_EQ(rows, audit.eligible);
    EXPECT_EQ(rows, rep.fairness.eligible);
  }
}

TEST(TrainingLog, EveryEpochCarriesCdi) {
  auto cfg = tiny().preset.train;
  cfg.epochs = 2;
  cfg.weights.lambda_cdi = 0.1;
  cfg.val_cdi_min_count = 1;
  const auto res = train(tiny().split.train, tiny().split.val, cfg);
  std::stringstream log;
  write_training_log(log, res);
  const auto epochs = read_training_log(log);
  ASSERT_EQ(epochs.size(), 2u);
  for (size_t i = 0; i < epochs.size(); ++i) {
    EXPECT_EQ(epochs[i].epoch, static_cast<int>(i + 1));
    EXPECT_TRUE(epochs[i].val_cdi_defined);
    EXPECT_NEAR(epochs[i].val_cdi, res.history[i].val_cdi, 1e-12);
    EXPECT_NEAR(epochs[i].cdi, res.history[i].cdi, 1e-12);
  }
}

TEST(Ablation, GridCoversBothSweepsWithoutDuplicates) {
  const auto runs = ablation_grid(EncoderConfig{});
  EXPECT_EQ(runs.size(), 36u);
  size_t grid = 0;
  for (size_t i = 0; i < runs.size(); ++i) {
    grid += runs[i].group == "sdm_x_ordering";
    for (size_t j = 0; j < i; ++j) EXPECT_FALSE(same_architecture(runs[i].encoder, runs[j].encoder));
  }
  EXPECT_EQ(grid, 25u);
}
