#include <gtest/gtest.h>

#include "semcov/semcov.hpp"
#include "test_util.hpp"

using namespace semcov;

namespace {

/// Logit rows giving true-class probability q for a two-class softmax.
std::vector<double> binary_logits(const std::vector<double>& q, const std::vector<int>& labels) {
  std::vector<double> out;
  for (size_t i = 0; i < q.size(); ++i) {
    const double l = q[i] <= 0 ? -50.0 : q[i] >= 1 ? 50.0 : std::log(q[i] / (1 - q[i]));
    out.push_back(labels[i] == 0 ? l / 2 : -l / 2);
    out.push_back(labels[i] == 0 ? -l / 2 : l / 2);
  }
  return out;
}

/// One sample per subgroup, class 0, descriptor 1: SCG s gets error 1 − q_s.
BatchContext<double> subgroup_batch(const std::vector<double>& q) {
  BatchContext<double> ctx;
  const int B = static_cast<int>(q.size());
  ctx.dims = {2, 1, B};
  for (int i = 0; i < B; ++i) {
    ctx.labels.push_back(0);
    ctx.subgroups.push_back(i);
    ctx.descriptors.push_back({1.0});
  }
  ctx.p = Var<double>::constant({B, 1}, 1.0);
  ctx.class_logits = fx::tensor<double>({B, 2}, binary_logits(q, ctx.labels));
  return ctx;
}

CoverageTable coverage_for(const ScgDims& dims, const std::vector<double>& first_class) {
  CoverageTable t;
  t.dims = dims;
  t.entries.assign(dims.count(), {0.5, 10});
  for (size_t s = 0; s < first_class.size(); ++s) t.entries[s].coverage = first_class[s];
  return t;
}

template <typename T>
struct CdiFixture {
  BatchContext<T> ctx;
  CoverageTable cov;
  explicit CdiFixture(uint64_t seed) {
    Rng rng(seed);
    const int B = 6;
    ctx.dims = {2, 1, 3};
    std::vector<double> p;
    for (int i = 0; i < B; ++i) {
      ctx.labels.push_back(i % 2);
      ctx.subgroups.push_back((i / 2) % 3);
      p.push_back(rng.uniform(0.2, 1.0));
      ctx.descriptors.push_back({p.back()});
    }
    ctx.p = fx::tensor<T>({B, 1}, p);
    ctx.class_logits = fx::random_tensor<T>({B, 2}, rng, -2, 2);
    ctx.class_logits.set_requires_grad(true);
    cov.dims = ctx.dims;
    for (size_t g = 0; g < cov.dims.count(); ++g) cov.entries.push_back({rng.uniform(), 5});
  }
  ParamList<T> params() const { return {{"logits", ctx.class_logits, true}}; }
  Var<T> loss() const { return cdi_loss(ctx, cov, 0.1); }
};

BatchContext<double> random_context(Rng& rng, int B, const ScgDims& dims, int pooled, DvaParams<double>& dva) {
  BatchContext<double> ctx;
  ctx.dims = dims;
  std::vector<double> p;
  for (int i = 0; i < B; ++i) {
    ctx.labels.push_back(static_cast<int>(rng.below(dims.T)));
    ctx.subgroups.push_back(static_cast<int>(rng.below(dims.S)));
    std::vector<double> d;
    for (int k = 0; k < dims.K; ++k) d.push_back(rng.uniform());
    p.insert(p.end(), d.begin(), d.end());
    ctx.descriptors.push_back(d);
  }
  ctx.p = fx::tensor<double>({B, dims.K}, p);
  ctx.class_logits = fx::random_tensor<double>({B, dims.T}, rng, -2, 2);
  ctx.descriptor_logits = fx::random_tensor<double>({B, dims.K}, rng, -2, 2);
  ctx.pooled = fx::random_tensor<double>({B, pooled}, rng);
  dva = DvaParams<double>(pooled, dims.K, 8, rng);
  return ctx;
}

}  // namespace

TEST(ClassificationLoss, UniformLogitsGiveLn2) {
  EXPECT_NEAR(classification_loss(Var<double>::zeros({5, 2}), {0, 1, 1, 0, 1}).item(), std::log(2.0), 1e-15);
}

TEST(ClassificationLoss, SaturatedTrueLogitGoesToZero) {
  EXPECT_LT(classification_loss(fx::tensor<double>({1, 2}, {-40, 40}), {1}).item(), 1e-30);
}

TEST(ClassificationLoss, ThreeSampleFixture) {
  const std::vector<double> z{1.0, 2.0, 0.5, 0.5, -1.0, 3.0, 0.0, -2.0, 0.7};
  const std::vector<int> y{2, 0, 1};
  double expect = 0;
  for (int i = 0; i < 3; ++i) {
    double den = 0;
    for (int c = 0; c < 3; ++c) den += std::exp(z[3 * i + c]);
    expect -= std::log(std::exp(z[3 * i + y[i]]) / den);
  }
  EXPECT_NEAR(classification_loss(fx::tensor<double>({3, 3}, z), y).item(), expect / 3, 1e-14);
  EXPECT_THROW(classification_loss(fx::tensor<double>({3, 3}, z), {0, 3, 1}), ArgumentError);
}

TEST(DescriptorLoss, Fixtures) {
  EXPECT_NEAR(descriptor_loss(Var<double>::zeros({1, 1}), Var<double>::constant({1, 1}, 0.5)).item(), std::log(2.0),
              1e-15);
  EXPECT_LT(descriptor_loss(Var<double>::constant({1, 1}, 20.0), Var<double>::constant({1, 1}, 1.0)).item(), 3e-9);
  const std::vector<double> x{0.3, -1.2, 2.5, -0.4}, p{0.9, 0.2, 1.0, 0.0};
  double expect = 0;
  for (int i = 0; i < 4; ++i) {
    const double s = 1 / (1 + std::exp(-x[i]));
    expect -= p[i] * std::log(s) + (1 - p[i]) * std::log(1 - s);
  }
  EXPECT_NEAR(descriptor_loss(fx::tensor<double>({2, 2}, x), fx::tensor<double>({2, 2}, p)).item(), expect / 4, 1e-14);
  EXPECT_THROW(descriptor_loss(fx::tensor<double>({1, 1}, {0}), fx::tensor<double>({1, 1}, {1.5})), ArgumentError);
}

TEST(DvaLoss, SingleSampleIsZero) {
  Rng rng(1);
  DvaParams<double> dva(6, 3, 8, rng);
  EXPECT_EQ(dva_loss(fx::random_tensor<double>({1, 6}, rng), fx::random_tensor<double>({1, 3}, rng, 0, 1), dva).item(),
            0.0);
}

TEST(DvaLoss, IdenticalRowsGiveLnB) {
  Rng rng(2);
  DvaParams<double> dva(6, 3, 8, rng);
  for (int B : {2, 5, 9}) {
    std::vector<double> z, p;
    for (int i = 0; i < B; ++i) {
      z.insert(z.end(), {0.3, -0.2, 0.9, 1.1, 0.0, -0.5});
      p.insert(p.end(), {0.2, 0.7, 0.4});
    }
    const double l = dva_loss(fx::tensor<double>({B, 6}, z), fx::tensor<double>({B, 3}, p), dva).item();
    EXPECT_NEAR(l, std::log(static_cast<double>(B)), 1e-12);
  }
}

TEST(DvaLoss, PerfectAlignmentLimit) {
  // Orthonormal v_i = d_i; row-wise CE of S/τ falls to 0 as τ → 0⁺.
  const int B = 4;
  std::vector<double> eye(B * B, 0.0);
  for (int i = 0; i < B; ++i) eye[i * B + i] = 1.0;
  auto v = fx::tensor<double>({B, B}, eye);
  std::vector<int> diag{0, 1, 2, 3};
  double prev = std::numeric_limits<double>::infinity();
  for (double tau : {1.0, 0.1, 0.01}) {
    const double l =
        -ag::mean(ag::pick(ag::log_softmax(similarity_matrix(v, v, Var<double>::scalar(tau))), diag)).item();
    EXPECT_LT(l, prev);
    prev = l;
  }
  EXPECT_LT(prev, 1e-40);
}

TEST(DvaLoss, TemperatureIsClamped) {
  Rng rng(3);
  DvaParams<double> dva(6, 3, 8, rng);
  EXPECT_NEAR(dva.temperature().item(), kTauInit, 1e-15);
  dva.log_temperature.mutable_value()(0) = -30;
  EXPECT_NEAR(dva.temperature().item(), kTauMin, 1e-15);
  dva.log_temperature.mutable_value()(0) = 30;
  EXPECT_NEAR(dva.temperature().item(), kTauMax, 1e-15);
}

TEST(SoftGroupTpr, Fixtures) {
  // All members certain and correct.
  auto ctx = subgroup_batch({1.0, 1.0});
  ctx.subgroups = {0, 0};
  EXPECT_NEAR(soft_group_tpr(ctx, {0, 0, 0}).tpr.item(), 1.0, 1e-15);

  ctx = subgroup_batch({0.2, 0.8});
  ctx.subgroups = {0, 0};
  const auto g = soft_group_tpr(ctx, {0, 0, 0});
  EXPECT_NEAR(g.tpr.item(), 0.5, 1e-12);
  EXPECT_NEAR(g.weight, 2.0, 1e-15);

  ctx = subgroup_batch({1.0, 0.0});
  ctx.subgroups = {0, 0};
  ctx.descriptors = {{0.9}, {0.1}};
  ctx.p = fx::tensor<double>({2, 1}, {0.9, 0.1});
  EXPECT_NEAR(soft_group_tpr(ctx, {0, 0, 0}).tpr.item(), 0.9, 1e-12);
}

TEST(SoftGroupTpr, BinaryHeadUsesSigmoid) {
  BatchContext<double> ctx;
  ctx.dims = {2, 1, 1};
  ctx.labels = {1, 0};
  ctx.subgroups = {0, 0};
  ctx.descriptors = {{1.0}, {1.0}};
  ctx.p = Var<double>::constant({2, 1}, 1.0);
  ctx.class_logits = fx::tensor<double>({2, 1}, {std::log(3.0), std::log(3.0)});
  // q = σ(ln 3) = 0.75 for the positive sample, 0.25 for the negative one.
  EXPECT_NEAR(soft_group_tpr(ctx, {1, 0, 0}).tpr.item(), 0.75, 1e-12);
  EXPECT_NEAR(soft_group_tpr(ctx, {0, 0, 0}).tpr.item(), 0.25, 1e-12);
}

TEST(CdiLoss, ConstantErrorGivesZero) {
  const auto ctx = subgroup_batch({0.7, 0.7, 0.7, 0.7});
  CdiLossInfo info;
  EXPECT_EQ(cdi_loss(ctx, coverage_for(ctx.dims, {0.1, 0.4, 0.5, 0.9}), 0.5, &info).item(), 0.0);
  EXPECT_EQ(info.eligible, 4u);
  EXPECT_TRUE(info.degenerate);
}

TEST(CdiLoss, AffineErrorGivesOne) {
  const std::vector<double> c{0.1, 0.4, 0.5, 0.9};
  std::vector<double> q;
  for (double x : c) q.push_back(1.0 - (0.8 - 0.5 * x));
  const auto ctx = subgroup_batch(q);
  EXPECT_NEAR(cdi_loss(ctx, coverage_for(ctx.dims, c), 0.5).item(), 1.0, 1e-9);
}

TEST(CdiLoss, TooFewEligibleGroupsGiveZero) {
  const auto ctx = subgroup_batch({0.2, 0.9});
  CdiLossInfo info;
  EXPECT_EQ(cdi_loss(ctx, coverage_for(ctx.dims, {0.1, 0.9}), 1.5, &info).item(), 0.0);
  EXPECT_EQ(info.eligible, 0u);
}

TEST(CdiLoss, GradientWrtLogitsMatchesFiniteDifferences) {
  for (uint64_t seed : {1u, 2u, 3u}) {
    const auto r = fx::mixed_gradcheck<CdiFixture>(1e-6, 200, seed);
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed;
    EXPECT_EQ(r.checked, 12u);
  }
}

TEST(CdiLoss, BoundedAndAffineInvariantInCoverage) {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    CdiFixture<double> f(seed);
    const double l = f.loss().item();
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 1.0);
    auto cov2 = f.cov;
    for (auto& e : cov2.entries) e.coverage = 3.0 * e.coverage + 0.25;
    EXPECT_NEAR(cdi_loss(f.ctx, cov2, 0.1).item(), l, 1e-12);
  }
}

TEST(TotalLoss, WeightsCombineTerms) {
  Rng rng(4);
  DvaParams<double> dva;
  const auto ctx = random_context(rng, 8, {2, 3, 2}, 5, dva);
  CoverageTable cov;
  cov.dims = ctx.dims;
  for (size_t g = 0; g < cov.dims.count(); ++g) cov.entries.push_back({rng.uniform(), 10});

  const auto none = total_loss(ctx, cov, dva, {0, 0, 0}, 0.1);
  EXPECT_EQ(none.total.item(), classification_loss(ctx.class_logits, ctx.labels).item());

  const auto full = total_loss(ctx, cov, dva, LossWeights{}, 0.1);
  EXPECT_GT(full.cdi, 0.0);
  EXPECT_NEAR(full.total.item(), full.cls + 0.05 * full.desc + 0.1 * full.dva + 0.1 * full.cdi, 1e-12);
  EXPECT_GE(full.total.item(), 0.0);
  EXPECT_THROW(total_loss(ctx, cov, dva, {-1, 0, 0}), ConfigError);
}

TEST(GradientCheck, QuadraticIsExact) {
  Rng rng(5);
  auto theta = Var<double>::parameter({7}, Array<double>::Random(7));
  ParamList<double> params{{"theta", theta, true}};
  std::function<Var<double>()> f = [theta] { return ag::sum(ag::square(theta)); };
  const auto r = gradient_check(f, params, 1e-4, rng);
  EXPECT_LT(r.max_rel_error, 1e-9);
  EXPECT_EQ(r.checked, 7u);
  EXPECT_THROW(gradient_check(f, params, 0.0, rng), ArgumentError);
}

TEST(GradientCheck, GroupsByModuleFamily) {
  EXPECT_EQ(param_group("encoder.layers.0.sdm.psi_out.weight"), "encoder.layers.sdm");
  EXPECT_EQ(param_group("encoder.layers.2.attn.q.bias"), "encoder.layers.attn");
  EXPECT_EQ(param_group("encoder.backbone.conv1.weight"), "encoder.backbone");
  EXPECT_EQ(param_group("dva.log_temperature"), "dva.log_temperature");
}
