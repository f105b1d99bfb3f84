#include <gtest/gtest.h>

#include <cmath>

#include "tada/optim.hpp"
#include "tada/stats.hpp"

using namespace tada;

namespace {

Dataset make_base(std::size_t n, double alpha, std::size_t dim, std::uint64_t seed, double beta_e = 1.5,
                  double beta_d = 0.8) {
  DistributionParams p;
  p.n = n;
  p.alpha = alpha;
  p.dim = dim;
  p.beta_e = beta_e;
  p.beta_d = beta_d;
  p.sigma_p = 1.0;
  return sample_dataset(p, make_feature_basis(dim, BasisMode::Canonical, 0), seed);
}

}  // namespace

TEST(GdStep, ZeroModelIsFixedPoint) {
  auto ds = make_base(10, 0.5, 30, 1);
  auto m = init_model(30, 2, {0.0, 0});
  EXPECT_EQ(gd_step(m, ds, 5.0).weights.norm(), 0.0);
}

TEST(GdStep, SmallStepDecreasesLoss) {
  auto ds = make_base(20, 0.5, 40, 2);
  auto m = init_model(40, 4, {0.3, 1});
  EXPECT_LT(loss(gd_step(m, ds, 1e-3), ds), loss(m, ds));
}

TEST(GdStep, MatchesHandGradientOnOneFilter) {
  // One fast point (y = +1, beta_e = 1), one filter w = (a, 0, b, ...),
  // noise xi = c e_2. f = a^3 + (b c)^3, l = sigmoid(-f),
  // grad = -l * 3 * (a^2 e_0 + (b c)^2 c e_2).
  Dataset ds;
  ds.params.dim = 4;
  ds.params.n = 1;
  ds.params.beta_e = 1.0;
  ds.params.beta_d = 0.5;
  ds.basis = make_feature_basis(4, BasisMode::Canonical, 0);
  ds.points = {DataPoint{1, FeatureKind::Fast, 0, Provenance::Original, 0}};
  ds.noise = Eigen::MatrixXd::Zero(4, 1);
  const double a = 0.4, b = 0.9, c = 0.6;
  ds.noise(2, 0) = c;
  CnnModel m;
  m.weights = Eigen::MatrixXd::Zero(4, 1);
  m.weights(0, 0) = a;
  m.weights(2, 0) = b;
  const double f = a * a * a + std::pow(b * c, 3);
  const double l = 1.0 / (1.0 + std::exp(f));
  Eigen::MatrixXd expected = m.weights;
  expected(0, 0) -= 0.1 * (-3.0 * l * a * a);
  expected(2, 0) -= 0.1 * (-3.0 * l * (b * c) * (b * c) * c);
  EXPECT_LE((gd_step(m, ds, 0.1).weights - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SamStep, ZeroModelRaisesZeroGradient) {
  auto ds = make_base(10, 0.5, 30, 1);
  try {
    sam_step(init_model(30, 2, {0.0, 0}), ds, 0.1, 0.05);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ZeroGradient);
  }
}

TEST(SamStep, TinyRadiusReducesToGd) {
  auto ds = make_base(20, 0.5, 40, 3);
  auto m = init_model(40, 3, {0.3, 2});
  auto sam = sam_step(m, ds, 0.1, 1e-12).first.weights;
  auto gd = gd_step(m, ds, 0.1).weights;
  EXPECT_LE((sam - gd).norm(), 1e-8 * gd.norm());
}

TEST(SamStep, TraceNormalization) {
  auto ds = make_base(20, 0.5, 40, 3);
  auto m = init_model(40, 3, {0.3, 2});
  auto [next, trace] = sam_step(m, ds, 0.1, 0.07);
  EXPECT_NEAR(trace.rho_t * trace.grad.frobenius_norm, 0.07, 1e-10);
  EXPECT_TRUE(trace.perturbed.weights == m.weights + trace.rho_t * trace.grad.columns);
  EXPECT_TRUE(next.weights == m.weights - 0.1 * trace.perturbed_grad.columns);
}

TEST(SamStep, DifferenceFromGdIsLinearInRadius) {
  auto ds = make_base(20, 0.5, 40, 4);
  auto m = init_model(40, 3, {0.3, 5});
  auto gd = gd_step(m, ds, 0.1).weights;
  double d1 = (sam_step(m, ds, 0.1, 1e-3).first.weights - gd).norm();
  double d2 = (sam_step(m, ds, 0.1, 5e-4).first.weights - gd).norm();
  EXPECT_NEAR(d1 / d2, 2.0, 0.2 * 2.0);
}

TEST(SgdStep, FullBatchEqualsGd) {
  auto ds = upsample(make_base(20, 0.5, 60, 4), 2);
  auto m = init_model(60, 3, {0.3, 5});
  auto [sgd, idx] = sgd_step(m, ds, 0.2, ds.size(), Sampling::WithoutReplacement, 77);
  EXPECT_TRUE(sgd.weights == gd_step(m, ds, 0.2).weights);
  EXPECT_EQ(idx.size(), ds.size());
}

TEST(SgdStep, StratifiedProportions) {
  auto ds = upsample(make_base(100, 0.5, 200, 4), 3);
  ASSERT_EQ(ds.size(), 200u);
  auto idx = sample_batch(ds, 20, Sampling::Stratified, StrataRounding::Exact, 9);
  std::size_t fast = 0;
  for (auto i : idx) fast += ds.points[i].feature == FeatureKind::Fast;
  EXPECT_EQ(fast, 5u);
  EXPECT_EQ(idx.size() - fast, 15u);
}

TEST(SgdStep, NonIntegralStrataRejectedUnlessRandomized) {
  auto ds = upsample(make_base(100, 0.5, 200, 4), 2);  // 150 points, 50 fast; B = 25 -> 8.33
  try {
    sample_batch(ds, 25, Sampling::Stratified, StrataRounding::Exact, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidStrata);
  }
  // Randomized rounding keeps the expected fast count at 25/3.
  double total = 0.0;
  const int reps = 6000;
  for (int r = 0; r < reps; ++r) {
    auto idx = sample_batch(ds, 25, Sampling::Stratified, StrataRounding::Randomized, derive_seed(3, "t", r));
    std::size_t fast = 0;
    for (auto i : idx) fast += ds.points[i].feature == FeatureKind::Fast;
    ASSERT_TRUE(fast == 8 || fast == 9);
    total += static_cast<double>(fast);
  }
  // Bernoulli(1/3) rounding: sd of the mean = sqrt(2/9 / reps).
  EXPECT_NEAR(total / reps, 25.0 / 3.0, 4.0 * std::sqrt(2.0 / 9.0 / reps));
}

TEST(SgdStep, StratifiedReplicaCountsAreHypergeometric) {
  // Within the augmented stratum of size 150 holding 50 sources x 3 copies,
  // the copies of one source in a B_2 = 15 draw are hypergeometric with mean
  // 15 * 3 / 150 = 0.3. Equivalently B * k / N_new over the whole batch.
  auto ds = upsample(make_base(100, 0.5, 200, 4), 3);
  const std::size_t src = 60;
  std::vector<double> ys;
  const int reps = 100000;
  ys.reserve(reps);
  for (int r = 0; r < reps; ++r) {
    auto idx = sample_batch(ds, 20, Sampling::Stratified, StrataRounding::Exact, derive_seed(5, "h", r));
    double y = 0.0;
    for (auto i : idx) y += ds.points[i].source == src;
    ys.push_back(y);
  }
  EXPECT_NEAR(stats::mean(ys), 20.0 * 3.0 / 200.0, 2.0 * stats::std_error(ys));
}

TEST(SgdStep, MiniBatchGradientIsUnbiased) {
  auto ds = make_base(40, 0.5, 60, 8);
  auto m = init_model(60, 2, {0.3, 2});
  Eigen::MatrixXd full = grad_full(m, ds).columns;
  const int reps = 10000;
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(full.rows(), full.cols()), s2 = s;
  for (int r = 0; r < reps; ++r) {
    auto idx = sample_batch(ds, 5, Sampling::WithoutReplacement, StrataRounding::Exact, derive_seed(1, "u", r));
    Eigen::MatrixXd g = grad_indices(m, ds, idx).columns;
    s += g;
    s2 += g.cwiseProduct(g);
  }
  Eigen::MatrixXd mean = s / reps;
  Eigen::MatrixXd se = ((s2 / reps - mean.cwiseProduct(mean)) / reps).cwiseSqrt();
  // Aggregate z-score over all entries with nonzero spread.
  double z2 = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < mean.size(); ++i)
    if (se(i) > 0.0) {
      double z = (mean(i) - full(i)) / se(i);
      z2 += z * z;
      ++count;
    }
  EXPECT_LE(std::sqrt(z2 / count), 3.0);
}

TEST(Train, ZeroStepsGivesSingleEntry) {
  auto ds = make_base(10, 0.5, 30, 1);
  auto m = init_model(30, 2, {0.1, 0});
  OptimizerConfig cfg;
  cfg.steps = 0;
  auto [out, rec] = train(m, ds, cfg, ds.basis);
  EXPECT_TRUE(out == m);
  EXPECT_EQ(rec.steps.size(), 1u);
}

TEST(Train, GdLossNonIncreasingForSmallStep) {
  auto ds = make_base(40, 0.8, 100, 2, 2.0, 1.0);
  auto m = init_model(100, 4, {0.05, 3});
  OptimizerConfig cfg;
  cfg.eta = 1e-2;
  cfg.steps = 50;
  auto [out, rec] = train(m, ds, cfg, ds.basis);
  ASSERT_EQ(rec.steps.size(), 51u);
  for (std::size_t t = 1; t < rec.steps.size(); ++t) EXPECT_LE(rec.steps[t].loss, rec.steps[t - 1].loss);
}

TEST(Train, DeterministicRecord) {
  auto ds = upsample(make_base(40, 0.5, 100, 2), 2);
  auto m = init_model(100, 3, {0.1, 3});
  OptimizerConfig cfg;
  cfg.method = Method::SGD;
  cfg.batch = 10;
  cfg.steps = 20;
  cfg.eta = 0.5;
  TrainOptions opts;
  opts.seed = 12;
  auto a = train(m, ds, cfg, ds.basis, opts).second.to_csv();
  auto b = train(m, ds, cfg, ds.basis, opts).second.to_csv();
  EXPECT_EQ(a, b);
  opts.seed = 13;
  EXPECT_NE(a, train(m, ds, cfg, ds.basis, opts).second.to_csv());
}

TEST(Train, SamZeroGradientTerminatesWithFlag) {
  auto ds = make_base(10, 0.5, 30, 1);
  OptimizerConfig cfg;
  cfg.method = Method::SAM;
  cfg.rho = 0.1;
  cfg.steps = 5;
  auto [out, rec] = train(init_model(30, 2, {0.0, 0}), ds, cfg, ds.basis);
  EXPECT_TRUE(rec.terminated_early);
  EXPECT_EQ(rec.steps.size(), 1u);
}

TEST(Train, CsvColumnsAndTestError) {
  auto ds = make_base(10, 0.5, 30, 1);
  auto test = make_base(20, 0.5, 30, 2);
  OptimizerConfig cfg;
  cfg.steps = 2;
  TrainOptions opts;
  opts.eval_set = &test;
  auto rec = train(init_model(30, 2, {0.1, 0}), ds, cfg, ds.basis, opts).second;
  auto csv = rec.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,loss,test_error,align_ve_0,align_ve_1,align_vd_0,align_vd_1");
  ASSERT_TRUE(rec.steps.back().test_error.has_value());
  EXPECT_GE(*rec.steps.back().test_error, 0.0);
}

TEST(Train, SamLearnsSlowFeatureFasterThanGd) {
  // beta_e = 2, beta_d = 1, alpha = 0.9; signed mean <w, v_d> over filters and
  // 20 seeds, SAM ahead of GD from some early step onwards. The window ends
  // before GD's slow alignment takes off on its own.
  const std::size_t T = 40;
  std::vector<double> gap(T + 1, 0.0);
  for (std::uint64_t s = 0; s < 20; ++s) {
    DistributionParams p;
    p.n = 100;
    p.alpha = 0.9;
    p.dim = 200;
    p.beta_e = 2.0;
    p.beta_d = 1.0;
    p.sigma_p = 1.0;
    auto ds = sample_dataset(p, make_feature_basis(p.dim, BasisMode::Canonical, 0), s);
    auto m = init_model(p.dim, 5, {0.05, s + 1000});
    OptimizerConfig gd;
    gd.eta = 0.5;
    gd.steps = T;
    OptimizerConfig sam = gd;
    sam.method = Method::SAM;
    sam.rho = 0.2;
    auto rg = train(m, ds, gd, ds.basis).second;
    auto rs = train(m, ds, sam, ds.basis).second;
    for (std::size_t t = 0; t <= T; ++t) {
      double a = 0.0, b = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        a += rs.steps[t].align_slow[j];
        b += rg.steps[t].align_slow[j];
      }
      gap[t] += a - b;
    }
  }
  std::size_t first = T + 1;
  for (std::size_t t = 1; t <= T; ++t) {
    bool ahead = true;
    for (std::size_t u = t; u <= T; ++u) ahead = ahead && gap[u] > 0.0;
    if (ahead) {
      first = t;
      break;
    }
  }
  EXPECT_LE(first, T / 2);
}
