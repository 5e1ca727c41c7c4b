// semcov_cli: gen-data, audit, train, eval, plot, ablate.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "semcov/semcov.hpp"

namespace fs = std::filesystem;
using namespace semcov;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out;
}

int fail(const char* kind, const std::string& msg, int code) {
  std::cerr << "error kind=" << kind << " code=" << code << " message=\"" << one_line(msg) << "\"\n";
  return code;
}

void print_config(const std::string& cmd, const io::Json& cfg) {
  std::cout << "config " << cmd << " " << cfg.dump() << std::endl;
}

std::ofstream open_out(const fs::path& p, bool binary = false) {
  std::ofstream out(p, binary ? std::ios::binary : std::ios::out);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

/// Archive by default, manifest when the path ends in .csv.
Dataset load_any(const fs::path& p, const ManifestOptions& opt = {}) {
  if (p.extension() == ".csv") return load_manifest(p, opt);
  return load_dataset(p);
}

io::Json synth_to_json(const SynthConfig& s) {
  return {{"n_samples", s.n_samples}, {"K", s.K}, {"T", s.T}, {"S", s.S}, {"channels", s.channels},
          {"height", s.height}, {"width", s.width}, {"tail_exponent", s.tail_exponent},
          {"label_rule_seed", s.label_rule_seed}, {"noise_level", s.noise_level}, {"image_noise", s.image_noise},
          {"blob_amplitude", s.blob_amplitude}, {"rng_seed", s.rng_seed}};
}

io::Json ratios_to_json(const SplitRatios& r) { return {{"train", r.train}, {"val", r.val}, {"test", r.test}}; }

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string preset = "desk";
  uint64_t seed = 1;
  int64_t n_samples = -1;
  double tail_exponent = -1, noise_level = -1;
  int64_t label_rule_seed = -1;
  std::string out = "data";
};

int cmd_gen(const GenArgs& a) {
  auto p = make_preset(a.preset, a.seed);
  if (a.n_samples >= 0) p.synth.n_samples = a.n_samples;
  if (a.tail_exponent >= 0) p.synth.tail_exponent = a.tail_exponent;
  if (a.noise_level >= 0) p.synth.noise_level = a.noise_level;
  if (a.label_rule_seed >= 0) p.synth.label_rule_seed = static_cast<uint64_t>(a.label_rule_seed);
  p.synth.validate();
  print_config("gen-data", {{"preset", a.preset}, {"synth", synth_to_json(p.synth)}, {"split", ratios_to_json(p.ratios)},
                            {"split_seed", a.seed}, {"out", a.out}});
  const auto ds = generate_synthetic_dataset(p.synth);
  const auto sp = split_dataset(ds, p.ratios, false, a.seed);
  fs::create_directories(a.out);
  const fs::path dir(a.out);
  {
    auto o = open_out(dir / "dataset.scds", true);
    write_dataset_archive(o, ds);
  }
  for (auto [name, part] : {std::pair{"train", &sp.train}, {"val", &sp.val}, {"test", &sp.test}}) {
    auto o = open_out(dir / (std::string(name) + ".scds"), true);
    write_dataset_archive(o, *part);
    auto m = open_out(dir / (std::string(name) + ".csv"));
    write_manifest(m, *part);
  }
  {
    auto m = open_out(dir / "manifest.csv");
    write_manifest(m, ds);
  }
  std::cout << "wrote " << ds.size() << " samples (" << sp.train.size() << " train, " << sp.val.size() << " val, "
            << sp.test.size() << " test) to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct AuditArgs {
  std::string input;
  std::string out = "audit";
  std::string mode = "soft";
  double tau = 0.5;
  int K = 0, T = 0, S = 0;
};

int cmd_audit(const AuditArgs& a) {
  if (a.mode != "soft" && a.mode != "hard") throw UsageError("--mode must be soft or hard");
  print_config("audit", {{"input", a.input}, {"out", a.out}, {"mode", a.mode}, {"tau", a.tau}, {"K", a.K}, {"T", a.T},
                         {"S", a.S}});
  ManifestOptions mo;
  mo.K = a.K;
  mo.T = a.T;
  mo.S = a.S;
  const auto ds = load_any(a.input, mo);
  const auto cov = a.mode == "soft" ? coverage_table(ds, CoverageMode::Soft) : coverage_table(ds, CoverageMode::Hard, a.tau);
  const auto rep = coverage_report(cov);
  fs::create_directories(a.out);
  const fs::path dir(a.out);
  {
    auto o = open_out(dir / "coverage.csv");
    write_coverage_csv(o, cov);
  }
  {
    auto o = open_out(dir / "ranked_coverage.csv");
    write_ranked_csv(o, rep);
  }
  {
    auto o = open_out(dir / "coverage_heatmap.svg");
    o << svg::coverage_heatmap(rep, cov.dims);
  }
  io::Json summary = {{"n_samples", ds.size()}, {"scgs", cov.size()}, {"min", rep.min}, {"median", rep.median},
                      {"max", rep.max}, {"q10", rep.q10}, {"q90", rep.q90}, {"clamp_warnings", ds.clamp_warnings}};
  summary["tail_ratio"] = std::isfinite(rep.tail_ratio) ? io::Json(rep.tail_ratio) : io::Json("inf");
  {
    auto o = open_out(dir / "long_tail.json");
    o << summary.dump(2) << "\n";
  }
  std::cout << summary.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, preset = "desk", data, out = "run";
  int64_t seed = -1;
  int epochs = -1;
  double lr = -1, lambda_cdi = -1, lambda_dva = -1, lambda_desc = -1;
};

int cmd_train(const TrainArgs& a) {
  const uint64_t seed = a.seed >= 0 ? static_cast<uint64_t>(a.seed) : 1;
  auto p = make_preset(a.preset, seed);
  TrainConfig cfg = p.train;
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw ConfigError("cannot open config " + a.config);
    io::Json j;
    try {
      j = io::Json::parse(in);
    } catch (const io::Json::exception& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    cfg = train_config_from_json(j, cfg);
  }
  if (a.seed >= 0) cfg.seed = seed;
  if (a.epochs >= 0) cfg.epochs = a.epochs;
  if (a.lr >= 0) cfg.base_lr = a.lr;
  if (a.lambda_cdi >= 0) cfg.weights.lambda_cdi = a.lambda_cdi;
  if (a.lambda_dva >= 0) cfg.weights.lambda_dva = a.lambda_dva;
  if (a.lambda_desc >= 0) cfg.weights.lambda_desc = a.lambda_desc;
  cfg.validate();

  Dataset tr, va;
  if (!a.data.empty()) {
    tr = load_dataset(fs::path(a.data) / "train.scds");
    va = load_dataset(fs::path(a.data) / "val.scds");
  } else {
    auto sp = split_dataset(generate_synthetic_dataset(p.synth), p.ratios, false, seed);
    tr = std::move(sp.train);
    va = std::move(sp.val);
  }
  print_config("train", {{"train", to_json(cfg)}, {"data", a.data.empty() ? "preset:" + a.preset : a.data},
                         {"n_train", tr.size()}, {"n_val", va.size()}, {"out", a.out}});
  fs::create_directories(a.out);
  const fs::path dir(a.out);
  auto res = train(tr, va, cfg, [](const EpochRecord& e) {
    std::cout << "epoch " << e.epoch << " loss " << io::fmt_fixed(e.total) << " val_auroc " << io::fmt_fixed(e.val_auroc)
              << " val_cdi " << (e.val_cdi_defined ? io::fmt_fixed(e.val_cdi) : "undefined") << std::endl;
  });
  save_checkpoint((dir / "model.ckpt").string(), res.best);
  {
    auto o = open_out(dir / "training_log.csv");
    write_training_log(o, res);
  }
  io::Json hist = io::Json::array();
  for (const auto& e : res.history)
    hist.push_back({{"epoch", e.epoch}, {"L_cls", e.cls}, {"L_desc", e.desc}, {"L_DVA", e.dva}, {"L_CDI", e.cdi},
                    {"total", e.total}, {"val_auroc", e.val_auroc},
                    {"val_cdi", e.val_cdi_defined ? io::Json(e.val_cdi) : io::Json()}});
  {
    auto o = open_out(dir / "history.json");
    o << io::Json{{"best_epoch", res.best_epoch}, {"stopped_epoch", res.stopped_epoch}, {"history", hist}}.dump(2) << "\n";
  }
  std::cout << "best_epoch " << res.best_epoch << " stopped_epoch " << res.stopped_epoch << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, data, out = "eval";
  size_t min_count = 1;
};

int cmd_eval(const EvalArgs& a) {
  print_config("eval", {{"checkpoint", a.checkpoint}, {"data", a.data}, {"out", a.out}, {"min_count", a.min_count}});
  const auto ck = load_checkpoint<float>(a.checkpoint);
  ManifestOptions mo;
  mo.K = ck.model.config().K;
  mo.T = ck.model.config().T;
  if (ck.training_coverage) mo.S = ck.training_coverage->dims.S;
  mo.channels = ck.model.config().image_channels;
  mo.height = ck.model.config().image_height();
  mo.width = ck.model.config().image_width();
  const auto ds = load_any(a.data, mo);
  const auto rep = evaluate(ck, ds, a.min_count);
  fs::create_directories(a.out);
  const fs::path dir(a.out);
  {
    auto o = open_out(dir / "report.json");
    o << to_json(rep).dump(2) << "\n";
  }
  {
    auto o = open_out(dir / "report.csv");
    write_report_csv(o, rep);
  }
  {
    auto o = open_out(dir / "per_scg.csv");
    write_per_scg_csv(o, rep);
  }
  std::cout << "auroc " << io::fmt_fixed(rep.classification.auroc) << " cdi " << io::fmt_fixed(rep.fairness.cdi) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct PlotArgs {
  std::vector<std::string> logs, labels;
  std::string coverage, out = "plots";
};

int cmd_plot(const PlotArgs& a) {
  if (a.logs.empty() && a.coverage.empty()) throw UsageError("plot needs --log and/or --coverage");
  if (!a.labels.empty() && a.labels.size() != a.logs.size()) throw UsageError("--label count must match --log count");
  print_config("plot", {{"logs", a.logs}, {"labels", a.labels}, {"coverage", a.coverage}, {"out", a.out}});
  fs::create_directories(a.out);
  const fs::path dir(a.out);
  if (!a.logs.empty()) {
    std::vector<svg::Series> series;
    auto csv = open_out(dir / "cdi_trajectory.csv");
    csv << "series,epoch,val_cdi,val_auroc\n";
    for (size_t i = 0; i < a.logs.size(); ++i) {
      std::ifstream in(a.logs[i]);
      if (!in) throw ParseError("cannot open " + a.logs[i]);
      const auto rows = read_training_log(in);
      svg::Series s;
      s.label = a.labels.empty() ? fs::path(a.logs[i]).parent_path().filename().string() : a.labels[i];
      if (s.label.empty()) s.label = "run " + std::to_string(i + 1);
      for (const auto& e : rows) {
        csv << s.label << "," << e.epoch << "," << (e.val_cdi_defined ? io::fmt(e.val_cdi) : "") << ","
            << io::fmt(e.val_auroc) << "\n";
        if (!e.val_cdi_defined) continue;
        s.x.push_back(e.epoch);
        s.y.push_back(e.val_cdi);
      }
      series.push_back(std::move(s));
    }
    auto o = open_out(dir / "cdi_trajectory.svg");
    o << svg::line_chart(series, "Validation CDI per epoch", "epoch", "CDI");
  }
  if (!a.coverage.empty()) {
    std::ifstream in(a.coverage);
    if (!in) throw ParseError("cannot open " + a.coverage);
    const auto cov = read_coverage_csv(in);
    auto o = open_out(dir / "coverage_heatmap.svg");
    o << svg::coverage_heatmap(coverage_report(cov), cov.dims);
  }
  std::cout << "wrote plots to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct AblateArgs {
  std::string preset = "desk", data, out = "ablation";
  uint64_t seed = 1;
  int epochs = -1;
  int max_runs = -1;
  size_t min_count = 5;
};

int cmd_ablate(const AblateArgs& a) {
  auto p = make_preset(a.preset, a.seed);
  if (a.epochs >= 0) p.train.epochs = a.epochs;
  p.train.validate();
  auto runs = ablation_grid(p.train.encoder);
  if (a.max_runs >= 0 && static_cast<size_t>(a.max_runs) < runs.size()) runs.resize(static_cast<size_t>(a.max_runs));
  print_config("ablate", {{"preset", a.preset}, {"train", to_json(p.train)}, {"runs", runs.size()}, {"data", a.data},
                          {"out", a.out}, {"min_count", a.min_count}});
  Dataset tr, va, te;
  if (!a.data.empty()) {
    tr = load_dataset(fs::path(a.data) / "train.scds");
    va = load_dataset(fs::path(a.data) / "val.scds");
    te = load_dataset(fs::path(a.data) / "test.scds");
  } else {
    auto sp = split_dataset(generate_synthetic_dataset(p.synth), p.ratios, false, a.seed);
    tr = std::move(sp.train);
    va = std::move(sp.val);
    te = std::move(sp.test);
  }
  const auto rows = run_ablation(runs, tr, va, te, p.train, a.min_count, [](size_t i, size_t n, const AblationRow& r) {
    std::cout << "run " << i + 1 << "/" << n << " " << to_string(r.encoder.sdm_variant) << " "
              << to_string(r.encoder.ordering) << " depth " << r.encoder.n_layers << " feedback "
              << (r.encoder.feedback ? "on" : "off") << " auroc " << io::fmt_fixed(r.auroc) << " cdi "
              << io::fmt_fixed(r.cdi) << (r.finite ? "" : " NON-FINITE") << std::endl;
  });
  fs::create_directories(a.out);
  auto o = open_out(fs::path(a.out) / "ablation.csv");
  write_ablation_csv(o, rows);
  size_t bad = 0;
  for (const auto& r : rows) bad += !r.finite;
  std::cout << "wrote " << rows.size() << " rows, " << bad << " non-finite\n";
  return bad ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic coverage audit, training and evaluation"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "generate a synthetic dataset with planted coverage imbalance");
  g->add_option("--preset", gen.preset, "desk, full or tiny");
  g->add_option("--seed", gen.seed);
  g->add_option("--n-samples", gen.n_samples);
  g->add_option("--tail-exponent", gen.tail_exponent);
  g->add_option("--noise-level", gen.noise_level);
  g->add_option("--label-rule-seed", gen.label_rule_seed);
  g->add_option("--out", gen.out, "output directory");

  AuditArgs aud;
  auto* au = app.add_subcommand("audit", "coverage table, long-tail summary and heatmap");
  au->add_option("--manifest,--data", aud.input, "manifest CSV or dataset archive")->required();
  au->add_option("--out", aud.out);
  au->add_option("--mode", aud.mode, "soft or hard");
  au->add_option("--tau", aud.tau, "hard-coverage threshold");
  au->add_option("--K", aud.K);
  au->add_option("--T", aud.T);
  au->add_option("--S", aud.S);

  TrainArgs tra;
  auto* t = app.add_subcommand("train", "train a model, write checkpoint and training log");
  t->add_option("--config", tra.config, "JSON with TrainConfig fields");
  t->add_option("--preset", tra.preset);
  t->add_option("--data", tra.data, "directory with train.scds and val.scds");
  t->add_option("--out", tra.out);
  t->add_option("--seed", tra.seed);
  t->add_option("--epochs", tra.epochs);
  t->add_option("--lr", tra.lr);
  t->add_option("--lambda-cdi", tra.lambda_cdi);
  t->add_option("--lambda-dva", tra.lambda_dva);
  t->add_option("--lambda-desc", tra.lambda_desc);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "metric report for a checkpoint on a dataset");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--data,--manifest", ev.data, "dataset archive or manifest CSV")->required();
  e->add_option("--out", ev.out);
  e->add_option("--min-count", ev.min_count);

  PlotArgs pl;
  auto* pp = app.add_subcommand("plot", "CDI trajectory and coverage heatmap SVGs");
  pp->add_option("--log", pl.logs, "training log CSV (repeatable)");
  pp->add_option("--label", pl.labels, "series label per --log");
  pp->add_option("--coverage", pl.coverage, "coverage CSV from audit");
  pp->add_option("--out", pl.out);

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "architecture ablation grid");
  a->add_option("--preset", ab.preset);
  a->add_option("--data", ab.data, "directory with train/val/test archives");
  a->add_option("--seed", ab.seed);
  a->add_option("--epochs", ab.epochs);
  a->add_option("--max-runs", ab.max_runs, "truncate the grid");
  a->add_option("--min-count", ab.min_count);
  a->add_option("--out", ab.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& h) {
    return app.exit(h);
  } catch (const CLI::CallForAllHelp& h) {
    return app.exit(h);
  } catch (const CLI::ParseError& err) {
    return fail("usage", err.what(), 2);
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*au) return cmd_audit(aud);
    if (*t) return cmd_train(tra);
    if (*e) return cmd_eval(ev);
    if (*pp) return cmd_plot(pl);
    if (*a) return cmd_ablate(ab);
  } catch (const UsageError& err) {
    return fail("usage", err.what(), 2);
  } catch (const ConfigError& err) {
    return fail("config", err.what(), 2);
  } catch (const ParseError& err) {
    return fail("parse", err.what(), 1);
  } catch (const TrainingError& err) {
    return fail("training", err.what(), 1);
  } catch (const DiagnosticError& err) {
    return fail("diagnostic", err.what(), 1);
  } catch (const std::exception& err) {
    return fail("runtime", err.what(), 1);
  }
  return 2;
}
