#pragma once

// Semantic Coverage Groups: enumeration, soft/hard coverage, per-group error
// bookkeeping, the Coverage Disparity Index and long-tail summaries.

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "semcov/data.hpp"
#include "semcov/errors.hpp"
#include "semcov/io.hpp"

namespace semcov {

struct SCGKey {
  int class_id = 0;
  int descriptor_id = 0;
  int subgroup_id = 0;
  auto operator<=>(const SCGKey&) const = default;
};

struct ScgDims {
  int T = 2, K = 7, S = 4;
  size_t count() const { return static_cast<size_t>(T) * K * S; }
  size_t index(const SCGKey& g) const {
    return (static_cast<size_t>(g.class_id) * K + g.descriptor_id) * S + g.subgroup_id;
  }
  bool contains(const SCGKey& g) const {
    return g.class_id >= 0 && g.class_id < T && g.descriptor_id >= 0 && g.descriptor_id < K && g.subgroup_id >= 0 &&
           g.subgroup_id < S;
  }
  static ScgDims of(const DatasetConfig& c) { return {c.T, c.K, c.S}; }
  bool operator==(const ScgDims&) const = default;
};

/// All T·K·S keys in lexicographic (class, descriptor, subgroup) order.
inline std::vector<SCGKey> enumerate_scgs(const ScgDims& dims) {
  if (dims.T <= 0 || dims.K <= 0 || dims.S <= 0) throw ConfigError("SCG dims must be positive");
  std::vector<SCGKey> out;
  out.reserve(dims.count());
  for (int c = 0; c < dims.T; ++c)
    for (int d = 0; d < dims.K; ++d)
      for (int s = 0; s < dims.S; ++s) out.push_back({c, d, s});
  return out;
}

struct CoverageValue {
  double coverage = 0.0;
  size_t count = 0;
};

/// Mean descriptor probability over members of (class, subgroup).
inline CoverageValue soft_coverage(const Dataset& ds, const SCGKey& g) {
  CoverageValue out;
  double sum = 0;
  for (const auto& s : ds.samples)
    if (s.class_label == g.class_id && s.subgroup == g.subgroup_id) {
      sum += s.descriptors[g.descriptor_id];
      ++out.count;
    }
  out.coverage = out.count ? sum / static_cast<double>(out.count) : 0.0;
  return out;
}

/// Fraction of (class, subgroup) members with probability >= tau.
inline CoverageValue hard_coverage(const Dataset& ds, const SCGKey& g, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("hard coverage threshold must lie in [0,1]");
  CoverageValue out;
  size_t hits = 0;
  for (const auto& s : ds.samples)
    if (s.class_label == g.class_id && s.subgroup == g.subgroup_id) {
      hits += s.descriptors[g.descriptor_id] >= tau;
      ++out.count;
    }
  out.coverage = out.count ? static_cast<double>(hits) / static_cast<double>(out.count) : 0.0;
  return out;
}

enum class CoverageMode { Soft, Hard };

/// Dense table over every SCG, stored in enumeration order.
struct CoverageTable {
  ScgDims dims;
  std::vector<CoverageValue> entries;

  const CoverageValue& at(const SCGKey& g) const { return entries.at(dims.index(g)); }
  size_t size() const { return entries.size(); }
};

inline CoverageTable coverage_table(const Dataset& ds, CoverageMode mode, std::optional<double> tau = std::nullopt) {
  if (mode == CoverageMode::Hard && !tau) throw ConfigError("hard coverage requires a threshold");
  CoverageTable t;
  t.dims = ScgDims::of(ds.config);
  for (const auto& g : enumerate_scgs(t.dims))
    t.entries.push_back(mode == CoverageMode::Soft ? soft_coverage(ds, g) : hard_coverage(ds, g, *tau));
  return t;
}

/// Per-group error bookkeeping. `tpr` is a weighted mean of correctness over
/// (class, subgroup) members with membership weight from the descriptor.
struct ErrorValue {
  double tpr = 1.0;
  double error = 0.0;
  double effective_weight = 0.0;
  size_t member_count = 0;
};

struct ErrorTable {
  ScgDims dims;
  std::vector<ErrorValue> entries;
  const ErrorValue& at(const SCGKey& g) const { return entries.at(dims.index(g)); }
  size_t size() const { return entries.size(); }
};

enum class Membership { Soft, Hard };

/// Builds an ErrorTable from per-sample correctness scores in [0, 1] (hard
/// 0/1 decisions at evaluation; soft true-class probabilities elsewhere).
inline ErrorTable error_table(const ScgDims& dims, std::span<const int> labels, std::span<const int> subgroups,
                              const std::vector<std::vector<double>>& descriptors, std::span<const double> correct,
                              Membership membership = Membership::Soft) {
  const size_t n = labels.size();
  if (subgroups.size() != n || descriptors.size() != n || correct.size() != n)
    throw ArgumentError("error_table: per-sample inputs differ in length");
  ErrorTable t;
  t.dims = dims;
  t.entries.assign(dims.count(), {});
  std::vector<double> num(dims.count(), 0.0);
  for (size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= dims.T || subgroups[i] < 0 || subgroups[i] >= dims.S)
      throw ArgumentError("error_table: label or subgroup out of range");
    for (int d = 0; d < dims.K; ++d) {
      const size_t gi = dims.index({labels[i], d, subgroups[i]});
      const double p = descriptors[i][d];
      const double w = membership == Membership::Soft ? p : (p >= 0.5 ? 1.0 : 0.0);
      num[gi] += w * correct[i];
      t.entries[gi].effective_weight += w;
      ++t.entries[gi].member_count;
    }
  }
  for (size_t gi = 0; gi < t.entries.size(); ++gi) {
    auto& e = t.entries[gi];
    e.tpr = e.effective_weight > 0 ? num[gi] / e.effective_weight : 1.0;
    e.error = 1.0 - e.tpr;
  }
  return t;
}

struct PearsonResult {
  double r = 0.0;
  bool degenerate = false;
};

/// Sample Pearson correlation; 0 with `degenerate` set when either input has
/// zero variance.
inline PearsonResult pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ArgumentError("pearson: length mismatch");
  if (xs.size() < 2) throw ArgumentError("pearson: need at least two points");
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0, scale_x = 0, scale_y = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
    scale_x = std::max(scale_x, std::abs(xs[i]));
    scale_y = std::max(scale_y, std::abs(ys[i]));
  }
  // Variance below rounding noise of the inputs counts as zero.
  const double eps = std::numeric_limits<double>::epsilon();
  const double floor_x = n * (eps * scale_x) * (eps * scale_x) * 16;
  const double floor_y = n * (eps * scale_y) * (eps * scale_y) * 16;
  if (!(sxx > floor_x) || !(syy > floor_y)) return {0.0, true};
  double r = sxy / std::sqrt(sxx * syy);
  r = std::clamp(r, -1.0, 1.0);
  return {r, false};
}

struct CdiResult {
  double cdi = 0.0;
  bool degenerate = false;
  size_t eligible = 0;
  std::vector<double> coverage;  // paired vectors actually correlated
  std::vector<double> error;
};

/// CDI = |pearson(c_g, e_g)| over SCGs with at least `min_count` members in
/// both tables (and non-zero membership weight).
inline CdiResult cdi(const CoverageTable& cov, const ErrorTable& err, size_t min_count = 1) {
  if (!(cov.dims == err.dims)) throw ArgumentError("cdi: coverage and error tables differ in shape");
  CdiResult out;
  for (size_t gi = 0; gi < cov.entries.size(); ++gi) {
    const auto& c = cov.entries[gi];
    const auto& e = err.entries[gi];
    if (c.count >= min_count && e.member_count >= min_count && e.effective_weight > 0) {
      out.coverage.push_back(c.coverage);
      out.error.push_back(e.error);
    }
  }
  out.eligible = out.coverage.size();
  if (out.eligible < 2) throw DiagnosticError("CDI needs at least two eligible SCGs, found " + std::to_string(out.eligible));
  const auto p = pearson(out.coverage, out.error);
  out.cdi = std::abs(p.r);
  out.degenerate = p.degenerate;
  return out;
}

struct LongTailReport {
  /// rows = descriptors, columns = (class, subgroup) pairs in lexicographic order
  std::vector<std::vector<double>> heatmap;
  std::vector<double> ranked_coverage;
  double min = 0, median = 0, max = 0;
  double q10 = 0, q25 = 0, q75 = 0, q90 = 0;
  /// max / min over non-empty groups (infinity when the minimum is 0)
  double tail_ratio = 0;
};

inline double quantile_sorted_desc(const std::vector<double>& desc, double q) {
  if (desc.empty()) return 0.0;
  // ascending position q over the descending array
  const double pos = q * static_cast<double>(desc.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, desc.size() - 1);
  const double a = desc[desc.size() - 1 - lo];
  const double b = desc[desc.size() - 1 - hi];
  return a + (b - a) * (pos - static_cast<double>(lo));
}

inline LongTailReport coverage_report(const CoverageTable& cov) {
  LongTailReport r;
  const auto& d = cov.dims;
  r.heatmap.assign(d.K, std::vector<double>(static_cast<size_t>(d.T) * d.S, 0.0));
  for (const auto& g : enumerate_scgs(d))
    r.heatmap[g.descriptor_id][static_cast<size_t>(g.class_id) * d.S + g.subgroup_id] = cov.at(g).coverage;
  for (const auto& e : cov.entries) r.ranked_coverage.push_back(e.coverage);
  std::sort(r.ranked_coverage.begin(), r.ranked_coverage.end(), std::greater<>());
  if (!r.ranked_coverage.empty()) {
    r.max = r.ranked_coverage.front();
    r.min = r.ranked_coverage.back();
    r.median = quantile_sorted_desc(r.ranked_coverage, 0.5);
    r.q10 = quantile_sorted_desc(r.ranked_coverage, 0.1);
    r.q25 = quantile_sorted_desc(r.ranked_coverage, 0.25);
    r.q75 = quantile_sorted_desc(r.ranked_coverage, 0.75);
    r.q90 = quantile_sorted_desc(r.ranked_coverage, 0.9);
    r.tail_ratio = r.min > 0 ? r.max / r.min : std::numeric_limits<double>::infinity();
  }
  return r;
}

inline void write_coverage_csv(std::ostream& out, const CoverageTable& cov) {
  out << "class,descriptor,subgroup,coverage,count\n";
  for (const auto& g : enumerate_scgs(cov.dims)) {
    const auto& e = cov.at(g);
    out << g.class_id << "," << g.descriptor_id << "," << g.subgroup_id << "," << io::fmt(e.coverage) << "," << e.count
        << "\n";
  }
}

inline void write_ranked_csv(std::ostream& out, const LongTailReport& r) {
  out << "rank,coverage\n";
  for (size_t i = 0; i < r.ranked_coverage.size(); ++i) out << i + 1 << "," << io::fmt(r.ranked_coverage[i]) << "\n";
}

/// Inverse of write_coverage_csv; dims are taken from the largest indices.
inline CoverageTable read_coverage_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || io::trim(line) != "class,descriptor,subgroup,coverage,count")
    throw ParseError("not a coverage table", 0);
  struct Row {
    SCGKey g;
    CoverageValue v;
  };
  std::vector<Row> rows;
  ScgDims dims{0, 0, 0};
  long row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (io::trim(line).empty()) continue;
    const auto c = io::split_csv_line(line);
    if (c.size() != 5) throw ParseError("expected 5 fields", row);
    long cls = 0, d = 0, s = 0, n = 0;
    Row r;
    if (!io::parse_long(io::trim(c[0]), cls) || !io::parse_long(io::trim(c[1]), d) || !io::parse_long(io::trim(c[2]), s) ||
        !io::parse_double(io::trim(c[3]), r.v.coverage) || !io::parse_long(io::trim(c[4]), n) || cls < 0 || d < 0 ||
        s < 0 || n < 0)
      throw ParseError("malformed coverage row", row);
    r.g = {static_cast<int>(cls), static_cast<int>(d), static_cast<int>(s)};
    r.v.count = static_cast<size_t>(n);
    dims.T = std::max(dims.T, r.g.class_id + 1);
    dims.K = std::max(dims.K, r.g.descriptor_id + 1);
    dims.S = std::max(dims.S, r.g.subgroup_id + 1);
    rows.push_back(r);
  }
  if (rows.size() != dims.count()) throw ParseError("coverage table is not dense");
  CoverageTable t;
  t.dims = dims;
  t.entries.resize(dims.count());
  for (const auto& r : rows) t.entries[dims.index(r.g)] = r.v;
  return t;
}

}  // namespace semcov
