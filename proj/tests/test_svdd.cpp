#include <gtest/gtest.h>

#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "helpers.hpp"
#include "latent_ofer/svdd.hpp"
#include "oracles.hpp"

using namespace latent_ofer;

namespace {

SvddModel untrained(int dim, int hidden, int out, double lambda, std::uint64_t seed) {
  torch::manual_seed(seed);
  SvddModel m;
  m.net = SvddNet(dim, hidden, out);
  m.weight_decay = lambda;
  m.center = torch::randn({out});
  return m;
}

}  // namespace

TEST(InitCenter, EqualLatentsGiveThatVector) {
  const auto v = torch::tensor({0.5f, -0.3f, 1.2f});
  EXPECT_TRUE(torch::allclose(init_center(v.unsqueeze(0).repeat({5, 1})), v));
}

TEST(InitCenter, SymmetricPairClampsToPlusPointOne) {
  const auto u = torch::tensor({0.7f, -2.0f, 0.05f});
  const auto c = init_center(torch::stack({u, -u}));
  EXPECT_TRUE(torch::allclose(c, torch::full({3}, 0.1f)));
}

TEST(InitCenter, MatchesArithmeticMeanBeforeClamp) {
  torch::manual_seed(1);
  const auto x = torch::randn({100, 8}) * 3.0;
  const auto c = oracle::to_vec(init_center(x));
  const auto rows = oracle::to_mat(x);
  for (int j = 0; j < 8; ++j) {
    double mean = 0.0;
    for (const auto& r : rows) mean += r[j];
    mean /= 100.0;
    const double expected = std::abs(mean) < 0.1 ? (mean < 0 ? -0.1 : 0.1) : mean;
    EXPECT_NEAR(c[j], expected, 1e-6);
  }
  EXPECT_THROW(init_center(torch::zeros({0, 4})), DomainError);
}

TEST(SvddLoss, ZeroWhenEverythingSitsAtTheCenterWithoutRegularizer) {
  auto m = untrained(4, 4, 4, 1e-300, 2);
  torch::NoGradGuard g;
  for (auto& w : m.net->weights()) w.zero_();
  m.center = torch::zeros({4});
  EXPECT_NEAR(svdd_loss(torch::randn({6, 4}), m).item<double>(), 0.0, 1e-12);
}

TEST(SvddLoss, QuadraticInDistance) {
  // Identity map through both layers: leaky_relu is identity on positives.
  auto m = untrained(2, 2, 2, 1e-300, 3);
  {
    torch::NoGradGuard g;
    m.net->weights()[0].copy_(torch::eye(2));
    m.net->weights()[1].copy_(torch::eye(2));
  }
  m.center = torch::tensor({1.0f, 1.0f});
  EXPECT_NEAR(svdd_loss(torch::tensor({{1.0f, 3.0f}}), m).item<double>(), 4.0, 1e-5);
}

TEST(SvddLoss, MatchesScalarRecomputation) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int dim = 3 + trial % 5, hidden = 2 + trial % 4, out = 2 + trial % 3;
    const double lambda = std::uniform_real_distribution<double>(1e-4, 1.0)(rng);
    auto m = untrained(dim, hidden, out, lambda, trial);
    m.net->to(torch::kFloat64);
    m.center = m.center.to(torch::kFloat64);
    const auto x = torch::randn({1 + trial % 7, dim}, torch::kFloat64);
    const double got = svdd_loss(x, m).item<double>();
    const auto w = m.net->weights();
    const double want = oracle::svdd_objective(oracle::to_mat(x), oracle::to_mat(w[0]), oracle::to_mat(w[1]),
                                               oracle::to_vec(m.center), lambda);
    EXPECT_LT(oracle::rel_err(got, want), 1e-6) << "trial " << trial;
  }
}

TEST(SvddLoss, NonnegativeAndEqualsRegularizerWhenCollapsed) {
  auto m = untrained(5, 4, 3, 0.3, 5);
  const auto x = torch::randn({10, 5});
  EXPECT_GE(svdd_loss(x, m).item<double>(), 0.0);
  torch::NoGradGuard g;
  double frob = 0.0;
  for (const auto& w : m.net->weights()) frob += w.pow(2).sum().item<double>();
  m.center = m.net->forward(torch::zeros({1, 5}))[0];
  EXPECT_NEAR(svdd_loss(torch::zeros({4, 5}), m).item<double>(), 0.15 * frob, 1e-5);
}

TEST(SvddLoss, GradientMatchesFiniteDifferences) {
  for (int trial = 0; trial < 10; ++trial) {
    auto m = untrained(4, 5, 3, 0.05, 100 + trial);
    m.net->to(torch::kFloat64);
    m.center = m.center.to(torch::kFloat64);
    const auto x = torch::randn({6, 4}, torch::kFloat64);
    for (std::size_t layer = 0; layer < 2; ++layer) {
      auto w = m.net->weights()[layer];
      for (auto& p : m.net->parameters()) p.mutable_grad() = torch::Tensor();
      svdd_loss(x, m).backward();
      const auto analytic = oracle::to_vec(w.grad());
      const auto numeric = oracle::numeric_gradient(
          [&](const torch::Tensor& v) {
            torch::NoGradGuard g;
            const auto saved = w.clone();
            w.copy_(v);
            const double out = svdd_loss(x, m).item<double>();
            w.copy_(saved);
            return out;
          },
          w);
      EXPECT_LT(oracle::rel_err(analytic, numeric), 1e-4) << "trial " << trial << " layer " << layer;
    }
  }
}

TEST(SvddNet, HasNoBiasParameters) {
  SvddNet net(8, 6, 4);
  for (const auto& item : net->named_parameters()) {
    EXPECT_EQ(item.key().find("bias"), std::string::npos) << item.key();
    EXPECT_EQ(item.value().dim(), 2);
  }
  EXPECT_EQ(net->parameters().size(), 2u);
}

TEST(TrainSvdd, OneEpochOnConstantDataShrinksDistances) {
  const auto x = torch::full({64, 6}, 0.7f);
  SvddConfig cfg;
  cfg.epochs = 0;
  const auto before = svdd_distances(x, train_svdd(x, cfg)).mean().item<double>();
  cfg.epochs = 1;
  const auto after = svdd_distances(x, train_svdd(x, cfg)).mean().item<double>();
  EXPECT_LE(after, before);
}

TEST(TrainSvdd, EpochLossIsNonincreasingWithinNoise) {
  torch::manual_seed(6);
  const auto x = torch::randn({512, 8});
  SvddConfig cfg;
  cfg.epochs = 25;
  SvddTrainingLog log;
  train_svdd(x, cfg, &log);
  ASSERT_EQ(log.epoch_loss.size(), 25u);
  for (std::size_t e = 1; e < log.epoch_loss.size(); ++e) EXPECT_LE(log.epoch_loss[e], log.epoch_loss[e - 1] * 1.05);
  EXPECT_LT(log.epoch_loss.back(), log.epoch_loss.front());
  EXPECT_THROW(train_svdd(torch::zeros({0, 8}), cfg), DomainError);
}

TEST(DetermineRadius, QuantileRule) {
  std::vector<double> d(100);
  std::iota(d.begin(), d.end(), 1.0);
  EXPECT_NEAR(determine_radius(d, 0.99), 99.01, 1e-9);
  EXPECT_DOUBLE_EQ(determine_radius(d, 1.0), 100.0);
  const std::vector<double> same(17, 2.5);
  for (double q : {0.01, 0.5, 0.99, 1.0}) EXPECT_DOUBLE_EQ(determine_radius(same, q), 2.5);
  EXPECT_THROW(determine_radius({}, 0.5), DomainError);
  EXPECT_THROW(determine_radius(d, 0.0), DomainError);
}

TEST(DetermineRadius, MatchesQuantileOracle) {
  std::mt19937_64 rng(7);
  std::exponential_distribution<double> e(1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> d(1 + trial * 3);
    for (auto& v : d) v = e(rng);
    const double q = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
    EXPECT_LT(oracle::rel_err(determine_radius(d, q), oracle::quantile(d, q)), 1e-12);
  }
}

namespace {

SvddModel identity_model(int dim, double radius) {
  SvddModel m;
  m.net = SvddNet(dim, dim, dim);
  {
    torch::NoGradGuard g;
    m.net->weights()[0].copy_(torch::eye(dim));
    m.net->weights()[1].copy_(torch::eye(dim));
  }
  m.center = torch::full({dim}, 1.0f);
  m.radius = radius;
  return m;
}

}  // namespace

TEST(ClassifyPatches, StrictBoundaryAndCenter) {
  const auto m = identity_model(2, 1.0);
  LatentSet l{torch::tensor({{1.0f, 1.0f}, {2.0f, 1.0f}, {2.5f, 1.0f}, {1.0f, 1.5f}}), 2, 2};
  const auto r = classify_patches(l, m);
  EXPECT_DOUBLE_EQ(r.scores[0].distance, 0.0);
  EXPECT_FALSE(r.mask[0]);
  EXPECT_DOUBLE_EQ(r.scores[1].distance, 1.0);
  EXPECT_FALSE(r.mask[1]);
  EXPECT_TRUE(r.mask[2]);
  EXPECT_FALSE(r.mask[3]);
  for (const auto& s : r.scores) EXPECT_EQ(s.occluded, s.distance > m.radius);
}

TEST(ClassifyPatches, ScaleConsistent) {
  torch::manual_seed(8);
  auto m = identity_model(4, 0.0);
  LatentSet l{torch::rand({16, 4}) * 2.0, 4, 4};
  m.radius = 0.9;
  const auto a = classify_patches(l, m).mask;
  // Scaling every distance and R by 3: scale the second layer and the center offset.
  {
    torch::NoGradGuard g;
    m.net->weights()[1].mul_(3.0);
  }
  m.center = m.center * 3.0;
  m.radius *= 3.0;
  EXPECT_EQ(classify_patches(l, m).mask, a);
}

TEST(ClassifyPatches, TwoClusterOracle) {
  torch::manual_seed(9);
  const auto near = torch::randn({400, 6}) * 0.2;
  SvddConfig cfg;
  cfg.epochs = 10;
  const auto m = train_svdd(near, cfg);
  // Far cluster: 10 radii away from the mapped center along a fixed direction.
  auto dir = torch::randn({6});
  dir = dir / dir.norm();
  auto far = torch::randn({36, 6}) * 0.2 + dir * 50.0;
  const auto d = oracle::to_vec(svdd_distances(far, m));
  LatentSet l{far, 6, 6};
  const auto r = classify_patches(l, m);
  int flagged = 0;
  for (int i = 0; i < 36; ++i) {
    EXPECT_EQ(r.mask[i], d[i] > m.radius);
    flagged += r.mask[i];
  }
  if (*std::min_element(d.begin(), d.end()) > 10.0 * m.radius) EXPECT_EQ(flagged, 36);
}

TEST(ClassifyPatches, StandardizerAppliedBeforeProjection) {
  auto m = identity_model(2, 0.5);
  const auto latents = torch::tensor({{{3.0f, 5.0f}, {1.0f, 1.0f}}, {{5.0f, 9.0f}, {1.0f, 1.0f}}});
  const auto s = fit_standardizer(latents);
  m.input_mean = s.mean;
  m.input_std = s.std;
  m.center = torch::zeros({2});
  LatentSet l{torch::tensor({{4.0f, 7.0f}, {1.0f, 1.0f}}), 1, 2};
  const auto r = classify_patches(l, m);
  EXPECT_NEAR(r.scores[0].distance, 0.0, 1e-6);
  EXPECT_NEAR(r.scores[1].distance, 0.0, 1e-6);
  EXPECT_THROW(fit_standardizer(torch::zeros({1, 2, 2})), DomainError);
}

TEST(DetectionMetrics, ConfusionArithmetic) {
  OcclusionMask pred(14, 14), truth(14, 14);
  int k = 0;
  for (int i = 0; i < 49; ++i, ++k) {
    pred.set(k, true);
    truth.set(k, true);
  }
  for (int i = 0; i < 10; ++i, ++k) pred.set(k, true);
  for (int i = 0; i < 5; ++i, ++k) truth.set(k, true);
  const auto m = detection_metrics(pred, truth);
  EXPECT_DOUBLE_EQ(m.precision, 49.0 / 59.0);
  EXPECT_DOUBLE_EQ(m.recall, 49.0 / 54.0);
  EXPECT_DOUBLE_EQ(m.accuracy, (196.0 - 15.0) / 196.0);
  EXPECT_FALSE(m.degenerate);
}

TEST(DetectionMetrics, DegenerateAndPerfect) {
  OcclusionMask none(4, 4);
  auto d = detection_metrics(none, none);
  EXPECT_DOUBLE_EQ(d.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(d.precision, 1.0);
  EXPECT_DOUBLE_EQ(d.recall, 1.0);
  EXPECT_TRUE(d.degenerate);
  OcclusionMask some(4, 4);
  some.set(3, true);
  const auto p = detection_metrics(some, some);
  EXPECT_DOUBLE_EQ(p.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(p.precision, 1.0);
  EXPECT_DOUBLE_EQ(p.recall, 1.0);
  EXPECT_FALSE(p.degenerate);
  EXPECT_THROW(detection_metrics(OcclusionMask(2, 2), OcclusionMask(3, 3)), ShapeError);
}

TEST(DetectionMetrics, MatchesConfusionOracleOnRandomMasks) {
  std::mt19937_64 rng(10);
  std::bernoulli_distribution b(0.3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<OcclusionMask> p, t;
    std::vector<bool> pf, tf;
    for (int img = 0; img < 3; ++img) {
      OcclusionMask a(6, 6), c(6, 6);
      for (int i = 0; i < 36; ++i) {
        const bool x = b(rng), y = b(rng);
        a.set(i, x);
        c.set(i, y);
        pf.push_back(x);
        tf.push_back(y);
      }
      p.push_back(a);
      t.push_back(c);
    }
    const auto m = detection_metrics(p, t);
    const auto o = oracle::confusion(pf, tf);
    EXPECT_EQ(m.true_positive, o.tp);
    EXPECT_EQ(m.false_positive, o.fp);
    if (o.tp + o.fp > 0) EXPECT_LT(oracle::rel_err(m.precision, double(o.tp) / (o.tp + o.fp)), 1e-12);
    if (o.tp + o.fn > 0) EXPECT_LT(oracle::rel_err(m.recall, double(o.tp) / (o.tp + o.fn)), 1e-12);
  }
}

TEST(SvddIo, RoundTripWithSidecar) {
  testing_util::TempDir dir("svdd");
  torch::manual_seed(11);
  const auto x = torch::randn({3, 36, 8});
  const auto s = fit_standardizer(x);
  SvddConfig cfg;
  cfg.epochs = 2;
  auto m = train_svdd(standardize(x, s.mean, s.std).reshape({-1, 8}), cfg);
  m.input_mean = s.mean;
  m.input_std = s.std;
  m.latent_depth = 1;
  save_svdd(m, dir / "s.ckpt", dir / "s.json");
  const auto back = load_svdd(dir / "s.ckpt", dir / "s.json");
  EXPECT_DOUBLE_EQ(back.radius, m.radius);
  EXPECT_EQ(back.latent_depth, 1);
  LatentSet l{x[0], 6, 6};
  EXPECT_EQ(classify_patches(l, back).mask, classify_patches(l, m).mask);
  std::ifstream in(dir / "s.json");
  const auto j = nlohmann::json::parse(in);
  for (const char* key : {"center", "radius", "quantile", "lambda"}) EXPECT_TRUE(j.contains(key)) << key;
}
