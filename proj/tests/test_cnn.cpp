#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "tada/cnn.hpp"

using namespace tada;

namespace {

Dataset make_base(std::size_t n, double alpha, std::size_t dim, std::uint64_t seed,
                  NoiseMode mode = NoiseMode::Idealized) {
  DistributionParams p;
  p.n = n;
  p.alpha = alpha;
  p.dim = dim;
  p.beta_e = 1.5;
  p.beta_d = 0.8;
  p.sigma_p = 1.0;
  p.noise_mode = mode;
  return sample_dataset(p, make_feature_basis(dim, BasisMode::RandomOrthogonal, seed + 100), seed);
}

// One-point dataset with hand-chosen patches.
Dataset single_point(const Eigen::VectorXd& noise, FeatureKind kind, int label, double beta_e, double beta_d) {
  Dataset ds;
  ds.params.dim = static_cast<std::size_t>(noise.size());
  ds.params.n = 1;
  ds.params.beta_e = beta_e;
  ds.params.beta_d = beta_d;
  ds.basis = make_feature_basis(ds.params.dim, BasisMode::Canonical, 0);
  ds.points = {DataPoint{label, kind, 0, Provenance::Original, 0}};
  ds.noise = noise;
  ds.base_size = 1;
  return ds;
}

}  // namespace

TEST(InitModel, ZeroScaleGivesZeroModel) {
  auto m = init_model(6, 3, {0.0, 1});
  EXPECT_EQ(m.weights.norm(), 0.0);
}

TEST(InitModel, ShapeAndFiniteness) {
  auto m = init_model(4, 3, {0.5, 2});
  EXPECT_EQ(m.weights.rows(), 4);
  EXPECT_EQ(m.weights.cols(), 3);
  EXPECT_TRUE(m.weights.allFinite());
}

TEST(InitModel, EntrywiseVarianceMatchesSigmaSquared) {
  // Pooled over 10^4 resamples of a 64 x 16 matrix; a single entry's sample
  // variance over 10^4 draws has relative sd sqrt(2/10^4) ~ 1.4%.
  const int reps = 10000;
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(64, 16), s2 = Eigen::MatrixXd::Zero(64, 16);
  for (int r = 0; r < reps; ++r) {
    auto m = init_model(64, 16, {0.01, static_cast<std::uint64_t>(r)});
    s += m.weights;
    s2 += m.weights.cwiseProduct(m.weights);
  }
  Eigen::MatrixXd var = (s2 - s.cwiseProduct(s) / reps) / (reps - 1);
  EXPECT_NEAR(var.mean(), 1e-4, 0.05e-4);
  EXPECT_LT((var.array() / 1e-4 - 1.0).abs().maxCoeff(), 0.08);
}

TEST(Forward, ZeroModelGivesZero) {
  auto ds = make_base(10, 0.5, 30, 1);
  auto m = init_model(30, 4, {0.0, 0});
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(forward(m, ds, i), 0.0);
}

TEST(Forward, HandEvaluatedCube) {
  Eigen::VectorXd noise = Eigen::VectorXd::Zero(5);
  noise(3) = 0.7;
  auto ds = single_point(noise, FeatureKind::Fast, 1, 1.0, 0.5);
  CnnModel m;
  m.weights = Eigen::MatrixXd::Zero(5, 1);
  m.weights(0, 0) = 2.0;
  EXPECT_DOUBLE_EQ(forward(m, ds, 0), 8.0);
}

TEST(Forward, OddSymmetryUnderLabelFlip) {
  auto ds = make_base(12, 0.5, 30, 3);
  auto m = init_model(30, 3, {0.3, 4});
  Dataset flipped = ds;
  for (auto& p : flipped.points) p.label = -p.label;
  flipped.noise = -ds.noise;
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_NEAR(forward(m, flipped, i), -forward(m, ds, i), 1e-12);
  EXPECT_NEAR(loss(m, flipped), loss(m, ds), 1e-12);
}

TEST(Forward, ShapeMismatchThrows) {
  auto ds = make_base(10, 0.5, 30, 1);
  auto m = init_model(29, 2, {0.1, 0});
  try {
    forward(m, ds, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeError);
  }
}

TEST(Logit, ScalarValues) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_LT(sigmoid(-50.0), 2e-22);
  EXPECT_GT(sigmoid(-50.0), 0.0);
  EXPECT_NEAR(sigmoid(-1.0), 1.0 / (1.0 + std::exp(1.0)), 1e-15);
  EXPECT_NEAR(sigmoid(-1.0), 0.268941, 1e-6);
  EXPECT_TRUE(std::isfinite(sigmoid(-1e3)) && std::isfinite(sigmoid(1e3)));
}

TEST(Logit, ZeroModelIsHalf) {
  auto ds = make_base(10, 0.5, 30, 1);
  auto m = init_model(30, 2, {0.0, 0});
  EXPECT_EQ(logit(m, ds, 0), 0.5);
}

TEST(Loss, ScalarValues) {
  auto ds = make_base(10, 0.5, 30, 1);
  EXPECT_NEAR(loss(init_model(30, 2, {0.0, 0}), ds), std::log(2.0), 1e-15);
  EXPECT_NEAR(logistic_loss(3.0), std::log1p(std::exp(-3.0)), 1e-15);
  EXPECT_NEAR(logistic_loss(3.0), 0.048587, 1e-6);
  EXPECT_NEAR(logistic_loss(-1e3), 1e3, 1e-9);
  EXPECT_TRUE(std::isfinite(logistic_loss(1e3)));
}

TEST(Loss, PermutationInvariant) {
  auto ds = make_base(20, 0.5, 40, 2);
  auto m = init_model(40, 3, {0.3, 1});
  Dataset perm = ds;
  std::reverse(perm.points.begin(), perm.points.end());
  EXPECT_NEAR(loss(m, perm), loss(m, ds), 1e-15);
}

TEST(Loss, EmptyDatasetThrows) {
  auto ds = make_base(10, 0.5, 30, 1);
  ds.points.clear();
  try {
    loss(init_model(30, 2, {0.1, 0}), ds);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyDataset);
  }
}

TEST(GradFull, ZeroModelGivesZero) {
  auto ds = make_base(10, 0.5, 30, 1);
  EXPECT_EQ(grad_full(init_model(30, 3, {0.0, 0}), ds).columns.norm(), 0.0);
}

TEST(GradFull, FrobeniusNormField) {
  auto ds = make_base(10, 0.5, 30, 1);
  auto g = grad_full(init_model(30, 3, {0.3, 0}), ds);
  EXPECT_NEAR(g.frobenius_norm, g.columns.norm(), 1e-12);
}

TEST(GradFull, MatchesFiniteDifferencesOnRandomConfigs) {
  Rng rng(2024);
  for (int c = 0; c < 25; ++c) {
    std::size_t dim = 3 + rng.index(30), J = 1 + rng.index(8), n = 1 + rng.index(20);
    DistributionParams p;
    p.dim = dim;
    p.n = n;
    p.alpha = 0.5;
    p.beta_e = 1.2;
    p.beta_d = 0.6;
    p.noise_mode = NoiseMode::Raw;
    auto ds = sample_dataset(p, make_feature_basis(dim, BasisMode::RandomOrthogonal, c), c, false);
    auto m = init_model(dim, J, {0.5 * rng.uniform(), static_cast<std::uint64_t>(c)});
    auto g = grad_full(m, ds).columns;
    auto fd = grad_finite_difference(m, ds, 1e-5).columns;
    EXPECT_LE((g - fd).norm() / std::max(1.0, g.norm()), 1e-6) << "config " << c;
  }
}

TEST(GradFull, FiniteDifferenceZeroAtZeroModel) {
  auto ds = make_base(10, 0.5, 20, 1);
  auto fd = grad_finite_difference(init_model(20, 2, {0.0, 0}), ds, 1e-5).columns;
  EXPECT_LE(fd.cwiseAbs().maxCoeff(), 1e-9);
}

TEST(GradFull, FiniteDifferenceErrorIsSecondOrder) {
  auto ds = make_base(8, 0.5, 12, 5, NoiseMode::Raw);
  auto m = init_model(12, 2, {0.6, 5});
  auto g = grad_full(m, ds).columns;
  double e1 = (grad_finite_difference(m, ds, 2e-3).columns - g).norm();
  double e2 = (grad_finite_difference(m, ds, 1e-3).columns - g).norm();
  EXPECT_NEAR(e1 / e2, 4.0, 0.4);
}

TEST(GradFull, UpsampledEqualsExplicitlyListedCopies) {
  auto base = make_base(10, 0.6, 30, 4);
  auto up = upsample(base, 2);
  Dataset manual = base;
  for (std::size_t i = 0; i < base.size(); ++i)
    if (base.points[i].feature == FeatureKind::Slow) manual.points.push_back(base.points[i]);
  auto m = init_model(30, 3, {0.4, 2});
  EXPECT_LE((grad_full(m, up).columns - grad_full(m, manual).columns).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(GradFull, MatchesPerExampleMean) {
  auto ds = upsample(make_base(10, 0.6, 30, 4), 3);
  auto m = init_model(30, 3, {0.4, 2});
  Eigen::MatrixXd pe = per_example_gradients(m, ds);
  Eigen::VectorXd mean = pe.rowwise().mean();
  Eigen::MatrixXd g = grad_full(m, ds).columns;
  Eigen::Map<const Eigen::VectorXd> gv(g.data(), g.size());
  EXPECT_LE((mean - gv).norm(), 1e-12 * std::max(1.0, gv.norm()));
}

TEST(FeatureGradient, ZeroCases) {
  auto ds = make_base(10, 0.5, 30, 1);
  EXPECT_EQ(feature_gradient(init_model(30, 2, {0.0, 0}), ds, 0, FeatureKind::Fast), 0.0);
  ds.params.beta_d = 0.0;
  EXPECT_EQ(feature_gradient(init_model(30, 2, {0.3, 0}), ds, 1, FeatureKind::Slow), 0.0);
}

TEST(FeatureGradient, SinglePointHandValue) {
  Eigen::VectorXd noise = Eigen::VectorXd::Zero(4);
  noise(2) = 0.5;
  auto ds = single_point(noise, FeatureKind::Slow, 1, 2.0, 1.0);
  CnnModel m;
  m.weights = Eigen::MatrixXd::Zero(4, 1);
  m.weights(1, 0) = 2.0;
  m.weights(2, 0) = 0.3;
  double f = 8.0 + std::pow(0.15, 3);
  double l = 1.0 / (1.0 + std::exp(f));
  double expected = -3.0 * l * 4.0;
  EXPECT_NEAR(feature_gradient(m, ds, 0, FeatureKind::Slow), expected, 1e-15);
  EXPECT_NEAR(grad_full(m, ds).columns.col(0).dot(ds.basis.slow), expected, 1e-15);
}

TEST(FeatureGradient, InvalidFilterThrows) {
  auto ds = make_base(10, 0.5, 30, 1);
  try {
    feature_gradient(init_model(30, 2, {0.1, 0}), ds, 2, FeatureKind::Fast);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::IndexError);
  }
}

TEST(NoiseGradient, OrthogonalFilterGivesZero) {
  Eigen::VectorXd noise = Eigen::VectorXd::Zero(4);
  noise(2) = 1.0;
  auto ds = single_point(noise, FeatureKind::Fast, 1, 1.0, 0.5);
  CnnModel m;
  m.weights = Eigen::MatrixXd::Zero(4, 1);
  m.weights(3, 0) = 1.0;
  EXPECT_EQ(noise_gradient(m, ds, 0, 0), 0.0);
}

TEST(NoiseGradient, HandValueWithTenPoints) {
  // M = 10, l_0 = 0.5, <w, xi_0> = 2, ||xi_0||^2 = 4, y_0 = +1:
  // magnitude (3/10) * 0.5 * 4 * 4 = 2.4. The fast feature term (-2)^3
  // cancels the noise term 2^3 so that f_0 = 0.
  const std::size_t d = 14;
  Dataset ds;
  ds.params.dim = d;
  ds.params.n = 10;
  ds.params.beta_e = 2.0;
  ds.params.beta_d = 1.0;
  ds.basis = make_feature_basis(d, BasisMode::Canonical, 0);
  ds.noise = Eigen::MatrixXd::Zero(d, 10);
  for (std::size_t i = 0; i < 10; ++i) {
    ds.points.push_back({1, FeatureKind::Fast, i, Provenance::Original, i});
    ds.noise(static_cast<Eigen::Index>(2 + i), static_cast<Eigen::Index>(i)) = i == 0 ? 2.0 : 0.1;
  }
  CnnModel m;
  m.weights = Eigen::MatrixXd::Zero(d, 1);
  m.weights(2, 0) = 1.0;
  m.weights(0, 0) = -1.0;
  ASSERT_NEAR(forward(m, ds, 0), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(noise_gradient(m, ds, 0, 0)), 2.4, 1e-12);
}

TEST(NoiseGradient, ReplicatedNoiseCarriesFactorK) {
  auto base = make_base(20, 0.5, 80, 6);
  auto m = init_model(80, 3, {0.2, 1});
  auto up = upsample(base, 3);
  auto l = logits(m, up);
  for (std::size_t i = 0; i < up.size(); ++i) {
    auto xi = up.noise_of(i);
    double a = m.filter(1).dot(xi);
    double single = 3.0 / up.size() * l(static_cast<Eigen::Index>(i)) * a * a * xi.squaredNorm();
    double k = up.points[i].feature == FeatureKind::Slow ? 3.0 : 1.0;
    EXPECT_NEAR(std::abs(noise_gradient(m, up, 1, i)), k * single, 1e-12 * k * single);
  }
}

TEST(GradFull, IdealizedDecompositionReconstructsGradient) {
  for (std::size_t k : {1, 3}) {
    auto base = make_base(20, 0.5, 80, 7);
    auto ds = upsample(base, k);
    auto m = init_model(80, 3, {0.3, 3});
    auto g = grad_full(m, ds).columns;
    auto ng = noise_gradients(m, ds);
    for (std::size_t j = 0; j < 3; ++j) {
      Eigen::VectorXd rec = feature_gradient(m, ds, j, FeatureKind::Fast) * ds.basis.fast +
                            feature_gradient(m, ds, j, FeatureKind::Slow) * ds.basis.slow;
      std::vector<bool> done(ds.noise_count(), false);
      for (std::size_t i = 0; i < ds.size(); ++i) {
        auto q = ds.points[i].noise_id;
        if (done[q]) continue;
        done[q] = true;
        auto xi = ds.noise_of(i);
        rec += ng(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) / xi.squaredNorm() * xi;
        EXPECT_NEAR(ng(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)), g.col(static_cast<Eigen::Index>(j)).dot(xi),
                    1e-10 * std::max(1e-300, std::abs(g.col(static_cast<Eigen::Index>(j)).dot(xi))) + 1e-18);
      }
      EXPECT_LE((rec - g.col(static_cast<Eigen::Index>(j))).norm(), 1e-9 * g.col(static_cast<Eigen::Index>(j)).norm());
      EXPECT_NEAR(feature_gradient(m, ds, j, FeatureKind::Fast), g.col(static_cast<Eigen::Index>(j)).dot(ds.basis.fast), 1e-10);
    }
  }
}

TEST(GradFull, StableForLargeMargins) {
  auto ds = make_base(10, 0.5, 30, 1);
  auto m = init_model(30, 2, {3.0, 1});
  auto f = outputs(m, ds);
  ASSERT_GT(f.cwiseAbs().maxCoeff(), 50.0);
  EXPECT_TRUE(grad_full(m, ds).columns.allFinite());
  EXPECT_TRUE(std::isfinite(loss(m, ds)));
}

TEST(Persistence, ModelRoundTripIsBitExact) {
  auto dir = std::filesystem::temp_directory_path() / "tada_model_roundtrip";
  std::filesystem::create_directories(dir);
  auto m = init_model(17, 5, {0.37, 99});
  save_model(m, dir / "m.json");
  EXPECT_TRUE(load_model(dir / "m.json") == m);
  std::filesystem::remove_all(dir);
}
