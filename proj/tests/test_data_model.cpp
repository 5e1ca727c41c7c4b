#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "semcov/semcov.hpp"
#include "test_util.hpp"

using namespace semcov;

namespace {

std::string archive_bytes(const Dataset& ds) {
  std::ostringstream o(std::ios::binary);
  write_dataset_archive(o, ds);
  return o.str();
}

SynthConfig small_cfg(int64_t n) {
  SynthConfig c;
  c.n_samples = n;
  c.height = c.width = 8;
  return c;
}

}  // namespace

TEST(Synthetic, ZeroSamplesGivesEmptyValidDataset) {
  const auto ds = generate_synthetic_dataset(small_cfg(0));
  EXPECT_TRUE(ds.empty());
  EXPECT_NO_THROW(ds.validate());
  EXPECT_EQ(ds.config.K, 7);
}

TEST(Synthetic, SoftCoverageTracksPlantedTruth) {
  SynthConfig c = small_cfg(4000);
  c.rng_seed = 1;
  const auto ds = generate_synthetic_dataset(c);
  ASSERT_TRUE(ds.generator_truth.has_value());
  const auto& truth = *ds.generator_truth;
  const auto cov = coverage_table(ds, CoverageMode::Soft);
  size_t checked = 0;
  for (size_t gi = 0; gi < cov.size(); ++gi) {
    if (cov.entries[gi].count < 50) continue;
    EXPECT_NEAR(cov.entries[gi].coverage, truth.realized_coverage[gi], 0.05) << "SCG " << gi;
    ++checked;
  }
  EXPECT_GT(checked, 20u);
}

TEST(Synthetic, SoftCoverageWithinSamplingErrorOfExpectation) {
  SynthConfig c = small_cfg(4000);
  c.rng_seed = 1;
  const auto ds = generate_synthetic_dataset(c);
  const auto& truth = *ds.generator_truth;
  const auto cov = coverage_table(ds, CoverageMode::Soft);
  // Member variance: presence Bernoulli(q) times the gap of the two uniform
  // means, plus the uniform spreads.
  const double gap = synth::kMeanPresent - synth::kMeanAbsent;
  const double var_on = synth::kPresentSpread * synth::kPresentSpread / 12;
  const double var_off = synth::kAbsentSpread * synth::kAbsentSpread / 12;
  for (size_t gi = 0; gi < cov.size(); ++gi) {
    const size_t n = cov.entries[gi].count;
    if (n < 50) continue;
    const double q = (truth.expected_coverage[gi] - synth::kMeanAbsent) / gap;
    const double var = q * (1 - q) * gap * gap + q * var_on + (1 - q) * var_off;
    EXPECT_NEAR(cov.entries[gi].coverage, truth.expected_coverage[gi], 4 * std::sqrt(var / n)) << "SCG " << gi;
  }
}

TEST(Synthetic, SameSeedIsByteIdentical) {
  const auto a = generate_synthetic_dataset(small_cfg(300));
  const auto b = generate_synthetic_dataset(small_cfg(300));
  EXPECT_EQ(archive_bytes(a), archive_bytes(b));
  auto c = small_cfg(300);
  c.rng_seed = 2;
  EXPECT_NE(archive_bytes(a), archive_bytes(generate_synthetic_dataset(c)));
}

TEST(Synthetic, EverySampleInRange) {
  const auto ds = generate_synthetic_dataset(small_cfg(500));
  for (const auto& s : ds.samples) {
    for (double p : s.descriptors.values()) {
      EXPECT_GE(p, 0.0);
      EXPECT_LE(p, 1.0);
    }
    EXPECT_GE(s.class_label, 0);
    EXPECT_LT(s.class_label, ds.config.T);
    EXPECT_GE(s.subgroup, 0);
    EXPECT_LT(s.subgroup, ds.config.S);
  }
}

TEST(Synthetic, PlantedRatesAreLongTailed) {
  const auto rate = synth::planted_rates(small_cfg(0));
  const auto [lo, hi] = std::minmax_element(rate.begin(), rate.end());
  EXPECT_GT(*hi / *lo, 10.0);
}

TEST(Archive, RoundTrip) {
  const auto ds = generate_synthetic_dataset(small_cfg(40));
  std::istringstream in(archive_bytes(ds), std::ios::binary);
  const auto back = read_dataset_archive(in);
  EXPECT_EQ(archive_bytes(back), archive_bytes(ds));
  ASSERT_EQ(back.size(), ds.size());
  EXPECT_EQ(back.samples[7].image, ds.samples[7].image);
}

TEST(Manifest, ThreeRowsAsWritten) {
  std::istringstream in(
      "sample_id,image_path,class,subgroup,d_1,d_2\n"
      "a,NONE,0,0,0.1,0.9\n"
      "b,NONE,1,1,0.25,0.5\n"
      "c,NONE,1,0,1,0\n");
  ManifestOptions mo;
  mo.height = mo.width = 4;
  const auto ds = parse_manifest(in, mo);
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.config.K, 2);
  EXPECT_EQ(ds.config.T, 2);
  EXPECT_EQ(ds.config.S, 2);
  EXPECT_EQ(ds.samples[1].descriptors.values(), (std::vector<double>{0.25, 0.5}));
  EXPECT_EQ(ds.samples[2].descriptors.values(), (std::vector<double>{1.0, 0.0}));
  EXPECT_EQ(ds.samples[2].class_label, 1);
  EXPECT_EQ(ds.samples[0].image.size(), 48u);
  EXPECT_EQ(ds.clamp_warnings, 0);
}

TEST(Manifest, OutOfRangeProbabilityIsClamped) {
  std::istringstream in("sample_id,image_path,class,subgroup,d_1,d_2\na,NONE,0,0,1.2,0.3\n");
  const auto ds = parse_manifest(in, {});
  EXPECT_EQ(ds.samples[0].descriptors[0], 1.0);
  EXPECT_EQ(ds.clamp_warnings, 1);
}

TEST(Manifest, MissingDescriptorColumnNamesIt) {
  std::istringstream in("sample_id,image_path,class,subgroup,d_2\na,NONE,0,0,0.3\n");
  ManifestOptions mo;
  mo.K = 2;
  try {
    parse_manifest(in, mo);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.column(), "d_1");
  }
}

TEST(Manifest, BadValuesNameRowAndColumn) {
  std::istringstream in("sample_id,image_path,class,subgroup,d_1\na,NONE,0,0,0.3\nb,NONE,0,0,abc\n");
  try {
    parse_manifest(in, {});
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), 2);
    EXPECT_EQ(e.column(), "d_1");
  }
  std::istringstream in2("sample_id,image_path,class,subgroup,d_1\na,NONE,3,0,0.3\n");
  ManifestOptions mo;
  mo.T = 2;
  EXPECT_THROW(parse_manifest(in2, mo), ParseError);
}

TEST(Manifest, WriteThenParseRoundTrips) {
  const auto ds = generate_synthetic_dataset(small_cfg(25));
  std::stringstream io;
  write_manifest(io, ds);
  ManifestOptions mo;
  mo.T = ds.config.T;
  mo.S = ds.config.S;
  mo.height = mo.width = 8;
  const auto back = parse_manifest(io, mo);
  ASSERT_EQ(back.size(), ds.size());
  for (size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.samples[i].descriptors, ds.samples[i].descriptors);
    EXPECT_EQ(back.samples[i].group_key, ds.samples[i].group_key);
  }
}

TEST(Split, TenSamplesSevenOneTwo) {
  std::vector<fx::Row> rows(10, {0, 0, {0.5}});
  const auto ds = fx::make_dataset(rows, 1, 1, 1);
  const auto sp = split_dataset(ds, {0.7, 0.1, 0.2}, false, 3);
  EXPECT_EQ(sp.train.size(), 7u);
  EXPECT_EQ(sp.val.size(), 1u);
  EXPECT_EQ(sp.test.size(), 2u);
  std::set<std::string> ids;
  for (const auto* part : {&sp.train, &sp.val, &sp.test})
    for (const auto& s : part->samples) EXPECT_TRUE(ids.insert(s.sample_id).second);
  EXPECT_EQ(ids.size(), 10u);
}

TEST(Split, GroupsStayTogether) {
  std::vector<fx::Row> rows(6, {0, 0, {0.5}});
  auto ds = fx::make_dataset(rows, 1, 1, 1);
  for (size_t i = 0; i < 6; ++i) ds.samples[i].group_key = "p" + std::to_string(i / 2);
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const auto sp = split_dataset(ds, {1.0 / 3, 1.0 / 3, 1.0 / 3}, true, seed);
    for (const auto* part : {&sp.train, &sp.val, &sp.test}) {
      ASSERT_EQ(part->size(), 2u);
      EXPECT_EQ(part->samples[0].group_key, part->samples[1].group_key);
    }
  }
}

TEST(Split, DeterministicAndGroupSafeOnSyntheticData) {
  auto c = small_cfg(200);
  c.group_size = 3;
  const auto ds = generate_synthetic_dataset(c);
  const auto a = split_dataset(ds, {0.7, 0.1, 0.2}, true, 9);
  const auto b = split_dataset(ds, {0.7, 0.1, 0.2}, true, 9);
  EXPECT_EQ(archive_bytes(a.train), archive_bytes(b.train));
  std::map<std::string, int> where;
  int k = 0;
  for (const auto* part : {&a.train, &a.val, &a.test}) {
    for (const auto& s : part->samples) {
      auto [it, fresh] = where.emplace(s.group_key, k);
      EXPECT_EQ(it->second, k) << s.group_key;
    }
    ++k;
  }
}

TEST(Split, RatiosMustSumToOne) {
  const auto ds = fx::make_dataset({{0, 0, {0.5}}}, 1, 1, 1);
  EXPECT_THROW(split_dataset(ds, {0.5, 0.5, 0.5}, false, 1), ConfigError);
  EXPECT_THROW(split_dataset(ds, {-0.1, 0.6, 0.5}, false, 1), ConfigError);
}
