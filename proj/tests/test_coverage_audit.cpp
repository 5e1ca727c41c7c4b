#include <gtest/gtest.h>

#include <sstream>

#include "semcov/semcov.hpp"
#include "test_util.hpp"

using namespace semcov;

namespace {

Dataset synthetic(int64_t n, uint64_t seed = 1) {
  SynthConfig c;
  c.n_samples = n;
  c.height = c.width = 8;
  c.rng_seed = seed;
  return generate_synthetic_dataset(c);
}

/// Independent recomputation by filtering, one SCG at a time.
CoverageValue brute_coverage(const Dataset& ds, int c, int d, int s, std::optional<double> tau) {
  std::vector<double> members;
  for (const auto& smp : ds.samples)
    if (smp.class_label == c && smp.subgroup == s) members.push_back(smp.descriptors[d]);
  CoverageValue v;
  v.count = members.size();
  if (members.empty()) return v;
  double acc = 0;
  for (double p : members) acc += tau ? (p >= *tau ? 1.0 : 0.0) : p;
  v.coverage = acc / static_cast<double>(members.size());
  return v;
}

CoverageTable table_of(const std::vector<double>& cov, size_t count = 10) {
  CoverageTable t;
  t.dims = {1, static_cast<int>(cov.size()), 1};
  for (double c : cov) t.entries.push_back({c, count});
  return t;
}

ErrorTable errors_of(const std::vector<double>& err, size_t count = 10) {
  ErrorTable t;
  t.dims = {1, static_cast<int>(err.size()), 1};
  for (double e : err) t.entries.push_back({1.0 - e, e, 1.0, count});
  return t;
}

}  // namespace

TEST(Scg, PaperGridHas112Groups) {
  EXPECT_EQ(enumerate_scgs({2, 7, 8}).size(), 112u);
}

TEST(Scg, Singleton) {
  const auto g = enumerate_scgs({1, 1, 1});
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0], (SCGKey{0, 0, 0}));
}

TEST(Scg, LexicographicOrder) {
  const ScgDims dims{2, 3, 2};
  const auto g = enumerate_scgs(dims);
  ASSERT_EQ(g.size(), 12u);
  EXPECT_EQ(g.front(), (SCGKey{0, 0, 0}));
  EXPECT_EQ(g.back(), (SCGKey{1, 2, 1}));
  EXPECT_TRUE(std::is_sorted(g.begin(), g.end()));
  for (size_t i = 0; i < g.size(); ++i) EXPECT_EQ(dims.index(g[i]), i);
}

TEST(Coverage, SoftMeanOfThree) {
  const auto ds = fx::make_dataset({{0, 0, {0.2}}, {0, 0, {0.4}}, {0, 0, {0.6}}, {1, 0, {0.9}}}, 1, 2, 2);
  const auto v = soft_coverage(ds, {0, 0, 0});
  EXPECT_NEAR(v.coverage, 0.4, 1e-15);
  EXPECT_EQ(v.count, 3u);
  const auto empty = soft_coverage(ds, {1, 0, 1});
  EXPECT_EQ(empty.coverage, 0.0);
  EXPECT_EQ(empty.count, 0u);
}

TEST(Coverage, HardThreshold) {
  const auto ds = fx::make_dataset({{0, 0, {0.2}}, {0, 0, {0.4}}, {0, 0, {0.6}}}, 1, 1, 1);
  EXPECT_DOUBLE_EQ(hard_coverage(ds, {0, 0, 0}, 0.5).coverage, 1.0 / 3.0);
  EXPECT_EQ(hard_coverage(ds, {0, 0, 0}, 0.0).coverage, 1.0);
  EXPECT_THROW(hard_coverage(ds, {0, 0, 0}, 1.5), ConfigError);
  EXPECT_THROW(coverage_table(ds, CoverageMode::Hard), ConfigError);
}

TEST(Coverage, FourSampleFixture) {
  const auto t = coverage_table(fx::coverage_fixture(), CoverageMode::Soft);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_NEAR(t.at({0, 0, 0}).coverage, 0.25, 1e-15);
  EXPECT_NEAR(t.at({0, 1, 0}).coverage, 0.75, 1e-15);
  EXPECT_EQ(t.at({0, 1, 0}).count, 4u);
}

TEST(Coverage, EmptyDatasetGivesZeros) {
  Dataset ds;
  ds.config = {3, 2, 2, 1, 4, 4};
  const auto t = coverage_table(ds, CoverageMode::Soft);
  ASSERT_EQ(t.size(), 12u);
  for (const auto& e : t.entries) {
    EXPECT_EQ(e.coverage, 0.0);
    EXPECT_EQ(e.count, 0u);
  }
}

TEST(Coverage, MatchesBruteForceOnSyntheticData) {
  const auto ds = synthetic(600);
  const auto soft = coverage_table(ds, CoverageMode::Soft);
  const auto hard = coverage_table(ds, CoverageMode::Hard, 0.5);
  EXPECT_EQ(soft.size(), static_cast<size_t>(ds.config.T * ds.config.K * ds.config.S));
  for (const auto& g : enumerate_scgs(soft.dims)) {
    const auto bs = brute_coverage(ds, g.class_id, g.descriptor_id, g.subgroup_id, std::nullopt);
    const auto bh = brute_coverage(ds, g.class_id, g.descriptor_id, g.subgroup_id, 0.5);
    EXPECT_NEAR(soft.at(g).coverage, bs.coverage, 1e-12);
    EXPECT_EQ(soft.at(g).count, bs.count);
    EXPECT_EQ(hard.at(g).coverage, bh.coverage);
  }
}

TEST(Coverage, BinaryDescriptorsSoftEqualsHard) {
  Rng rng(4);
  std::vector<fx::Row> rows;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> p(4);
    for (auto& v : p) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
    rows.push_back({static_cast<int>(rng.below(2)), static_cast<int>(rng.below(3)), p});
  }
  const auto ds = fx::make_dataset(rows, 4, 2, 3, 1, 4);
  const auto soft = coverage_table(ds, CoverageMode::Soft);
  const auto hard = coverage_table(ds, CoverageMode::Hard, 0.5);
  for (size_t i = 0; i < soft.size(); ++i) EXPECT_EQ(soft.entries[i].coverage, hard.entries[i].coverage);
}

TEST(Pearson, HandFixtures) {
  const std::vector<double> a{1, 2, 3}, b{3, 2, 1};
  EXPECT_NEAR(pearson(a, a).r, 1.0, 1e-12);
  EXPECT_NEAR(pearson(a, b).r, -1.0, 1e-12);
  // Σ(x−x̄)(y−ȳ) = 3, Σ(x−x̄)² = Σ(y−ȳ)² = 5
  EXPECT_NEAR(pearson(std::vector<double>{1, 2, 3, 4}, std::vector<double>{2, 1, 4, 3}).r, 0.6, 1e-12);
  const auto flat = pearson(std::vector<double>{1, 2, 3}, std::vector<double>{5, 5, 5});
  EXPECT_EQ(flat.r, 0.0);
  EXPECT_TRUE(flat.degenerate);
  EXPECT_THROW(pearson(std::vector<double>{1}, std::vector<double>{1}), ArgumentError);
}

TEST(Cdi, AffineRelationGivesOne) {
  const std::vector<double> c{0.1, 0.3, 0.35, 0.8, 0.9};
  std::vector<double> e;
  for (double x : c) e.push_back(0.8 - 0.5 * x);
  const auto r = cdi(table_of(c), errors_of(e));
  EXPECT_NEAR(r.cdi, 1.0, 1e-9);
  EXPECT_FALSE(r.degenerate);
  EXPECT_EQ(r.eligible, 5u);
}

TEST(Cdi, ConstantErrorIsDegenerate) {
  const auto r = cdi(table_of({0.1, 0.5, 0.9}), errors_of({0.2, 0.2, 0.2}));
  EXPECT_EQ(r.cdi, 0.0);
  EXPECT_TRUE(r.degenerate);
}

TEST(Cdi, IndependentNoiseIsSmall) {
  Rng rng(2024);
  std::vector<double> c(1000), e(1000);
  for (size_t i = 0; i < c.size(); ++i) {
    c[i] = rng.uniform();
    e[i] = rng.uniform();
  }
  EXPECT_LT(cdi(table_of(c), errors_of(e)).cdi, 0.1);
}

TEST(Cdi, AffineCoverageInvarianceAndSignSymmetry) {
  Rng rng(5);
  std::vector<double> c(40), e(40), flipped(40);
  for (size_t i = 0; i < c.size(); ++i) {
    c[i] = rng.uniform();
    e[i] = 0.3 * c[i] + 0.2 * rng.uniform();
    flipped[i] = 1.0 - e[i];
  }
  const double base = cdi(table_of(c), errors_of(e)).cdi;
  for (auto [a, b] : {std::pair{2.0, 0.5}, {0.01, -3.0}, {17.0, 100.0}}) {
    std::vector<double> c2;
    for (double x : c) c2.push_back(a * x + b);
    EXPECT_NEAR(cdi(table_of(c2), errors_of(e)).cdi, base, 1e-12);
  }
  EXPECT_NEAR(cdi(table_of(c), errors_of(flipped)).cdi, base, 1e-12);
}

TEST(Cdi, MinCountFiltersAndTooFewThrows) {
  auto cov = table_of({0.1, 0.5, 0.9});
  auto err = errors_of({0.9, 0.5, 0.1});
  err.entries[2].member_count = 1;
  EXPECT_EQ(cdi(cov, err, 5).eligible, 2u);
  err.entries[1].member_count = 1;
  EXPECT_THROW(cdi(cov, err, 5), DiagnosticError);
}

TEST(ErrorTable, WeightedTpr) {
  const ScgDims dims{1, 1, 1};
  const std::vector<int> labels{0, 0}, subs{0, 0};
  const std::vector<std::vector<double>> desc{{0.9}, {0.1}};
  const std::vector<double> correct{1.0, 0.0};
  const auto t = error_table(dims, labels, subs, desc, correct);
  EXPECT_NEAR(t.entries[0].tpr, 0.9, 1e-15);
  EXPECT_NEAR(t.entries[0].error, 0.1, 1e-15);
  EXPECT_EQ(t.entries[0].member_count, 2u);
}

TEST(LongTail, UniformCoverageIsFlat) {
  CoverageTable t;
  t.dims = {2, 3, 2};
  t.entries.assign(12, {0.5, 4});
  const auto r = coverage_report(t);
  EXPECT_EQ(r.min, 0.5);
  EXPECT_EQ(r.median, 0.5);
  EXPECT_EQ(r.max, 0.5);
  EXPECT_EQ(r.tail_ratio, 1.0);
  ASSERT_EQ(r.heatmap.size(), 3u);
  EXPECT_EQ(r.heatmap[0].size(), 4u);
}

TEST(LongTail, PlantedDatasetIsRankedAndSteep) {
  const auto ds = synthetic(4000);
  const auto cov = coverage_table(ds, CoverageMode::Soft);
  const auto r = coverage_report(cov);
  EXPECT_TRUE(std::is_sorted(r.ranked_coverage.rbegin(), r.ranked_coverage.rend()));
  ASSERT_EQ(r.heatmap.size(), static_cast<size_t>(ds.config.K));
  EXPECT_EQ(r.heatmap[0].size(), static_cast<size_t>(ds.config.T * ds.config.S));
  // The planted rates span kRateMax/kRateMin; the softened coverage is bounded
  // by the same transform, so its range must reach the softened rate range
  // less sampling slack.
  const auto& truth = ds.generator_truth->expected_coverage;
  const auto [lo, hi] = std::minmax_element(truth.begin(), truth.end());
  EXPECT_GE(r.tail_ratio, 0.8 * (*hi / *lo));
  EXPECT_GT(r.tail_ratio, 3.0);
  // Rank agreement with the generator on groups with enough members.
  std::vector<std::pair<double, double>> pairs;
  for (size_t gi = 0; gi < cov.size(); ++gi)
    if (cov.entries[gi].count >= 50) pairs.push_back({truth[gi], cov.entries[gi].coverage});
  std::vector<double> xs, ys;
  for (auto [x, y] : pairs) {
    xs.push_back(x);
    ys.push_back(y);
  }
  EXPECT_GT(pearson(xs, ys).r, 0.95);
}

TEST(CoverageCsv, RoundTrip) {
  const auto t = coverage_table(synthetic(300), CoverageMode::Soft);
  std::stringstream io;
  write_coverage_csv(io, t);
  const auto back = read_coverage_csv(io);
  ASSERT_EQ(back.dims, t.dims);
  for (size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(back.entries[i].coverage, t.entries[i].coverage);
    EXPECT_EQ(back.entries[i].count, t.entries[i].count);
  }
}
