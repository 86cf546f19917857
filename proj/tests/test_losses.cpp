#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "latent_ofer/quality.hpp"
#include "latent_ofer/reconstruct.hpp"
#include "oracles.hpp"

using namespace latent_ofer;
using testing_util::random_image;

TEST(TotalLoss, DefaultWeights) {
  EXPECT_NEAR(total_loss(1, 1, 1, 1, 1, LossWeights{}), 2.014, 1e-12);
  EXPECT_NEAR(total_loss(0, 0, 0, 1, 0, LossWeights{}), 0.002, 1e-15);
}

TEST(TotalLoss, LinearAndMatchesOracle) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    LossWeights w{u(rng), u(rng), u(rng), u(rng)};
    const double t[5] = {u(rng), u(rng), u(rng), u(rng), u(rng)};
    const double got = total_loss(t[0], t[1], t[2], t[3], t[4], w);
    EXPECT_NEAR(got, oracle::total_loss(t[0], t[1], t[2], t[3], t[4], w.re, w.c, w.sc, w.d), 1e-12);
    EXPECT_NEAR(total_loss(2 * t[0], 2 * t[1], 2 * t[2], 2 * t[3], 2 * t[4], w), 2 * got, 1e-11);
    LossTerms parts;
    auto scalar = [](double v) { return torch::tensor(v, torch::kFloat64); };
    parts = {scalar(t[0]), scalar(t[1]), scalar(t[2]), scalar(t[3]), scalar(t[4])};
    EXPECT_NEAR(total_loss(parts, w).item<double>(), got, 1e-12);
  }
}

TEST(TotalLoss, RejectsNonFiniteTerms) {
  const double nan = std::nan("");
  EXPECT_THROW(total_loss(nan, 0, 0, 0, 0, LossWeights{}), DomainError);
  LossTerms parts{torch::tensor(1.0), torch::tensor(1.0), torch::tensor(INFINITY), torch::tensor(0.0),
                  torch::tensor(0.0)};
  EXPECT_THROW(total_loss(parts, LossWeights{}), DomainError);
}

TEST(SemanticConsistency, UniformGivesLogSeven) {
  const auto p = torch::full({3, 7}, 1.0 / 7.0, torch::kFloat64);
  EXPECT_NEAR(semantic_consistency(p, p).item<double>(), std::log(7.0), 1e-12);
  EXPECT_NEAR(std::log(7.0), 1.9459, 1e-4);
}

TEST(SemanticConsistency, OneHotIdenticalIsZeroAndNonnegative) {
  const auto onehot = torch::eye(7, torch::kFloat64);
  EXPECT_NEAR(semantic_consistency(onehot, onehot).item<double>(), 0.0, 1e-12);
  torch::manual_seed(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = torch::softmax(torch::randn({4, 7}, torch::kFloat64), 1);
    const auto b = torch::softmax(torch::randn({4, 7}, torch::kFloat64), 1);
    const double got = semantic_consistency(a, b).item<double>();
    EXPECT_GE(got, 0.0);
    EXPECT_LT(oracle::rel_err(got, oracle::semantic_consistency(oracle::to_mat(a), oracle::to_mat(b))), 1e-12);
  }
}

TEST(SemanticConsistency, ZeroProbabilityIsClampedAndRowsChecked) {
  auto gt = torch::zeros({1, 7}, torch::kFloat64);
  gt[0][2] = 1.0;
  auto rec = torch::zeros({1, 7}, torch::kFloat64);
  rec[0][0] = 1.0;
  EXPECT_NEAR(semantic_consistency(gt, rec).item<double>(), -std::log(kLogClamp), 1e-9);
  EXPECT_THROW(semantic_consistency(torch::full({1, 7}, 0.2), torch::full({1, 7}, 1.0 / 7)), DomainError);
  EXPECT_THROW(semantic_consistency(torch::full({1, 6}, 1.0 / 6), torch::full({1, 6}, 1.0 / 6)), ShapeError);
}

TEST(SemanticConsistency, GradientMatchesFiniteDifferences) {
  torch::manual_seed(3);
  const auto gt = torch::softmax(torch::randn({2, 7}, torch::kFloat64), 1);
  auto logits = torch::randn({2, 7}, torch::kFloat64).requires_grad_(true);
  semantic_consistency(gt, torch::softmax(logits, 1)).backward();
  const auto numeric = oracle::numeric_gradient(
      [&](const torch::Tensor& l) { return semantic_consistency(gt, torch::softmax(l, 1)).item<double>(); },
      logits);
  EXPECT_LT(oracle::rel_err(oracle::to_vec(logits.grad()), numeric), 1e-6);
}

TEST(ReconstructionLoss, MaskedPixelsWeighSixTimes) {
  const auto gt = torch::zeros({1, 3, 8, 8}, torch::kFloat64);
  const auto rec = torch::ones({1, 3, 8, 8}, torch::kFloat64);
  auto mask = torch::zeros({1, 1, 8, 8}, torch::kFloat64);
  EXPECT_NEAR(reconstruction_loss(gt, rec, mask).item<double>(), 1.0, 1e-12);
  mask.fill_(1.0);
  EXPECT_NEAR(reconstruction_loss(gt, rec, mask).item<double>(), 6.0, 1e-12);
  // Same unit error on one masked pixel vs one unmasked pixel.
  mask.zero_();
  mask[0][0][0][0] = 1.0;
  auto one_in = gt.clone();
  one_in[0][0][0][0] = 1.0;
  auto one_out = gt.clone();
  one_out[0][0][5][5] = 1.0;
  EXPECT_NEAR(reconstruction_loss(gt, one_in, mask).item<double>() / reconstruction_loss(gt, one_out, mask).item<double>(),
              6.0, 1e-12);
  EXPECT_THROW(reconstruction_loss(gt, rec, torch::zeros({1, 1, 4, 4})), ShapeError);
}

TEST(ReconstructionLoss, GradientMatchesFiniteDifferences) {
  torch::manual_seed(4);
  const auto gt = torch::rand({1, 2, 4, 4}, torch::kFloat64);
  const auto mask = (torch::rand({1, 1, 4, 4}) > 0.5).to(torch::kFloat64);
  auto rec = torch::rand({1, 2, 4, 4}, torch::kFloat64).requires_grad_(true);
  reconstruction_loss(gt, rec, mask).backward();
  const auto numeric = oracle::numeric_gradient(
      [&](const torch::Tensor& r) { return reconstruction_loss(gt, r, mask).item<double>(); }, rec);
  EXPECT_LT(oracle::rel_err(oracle::to_vec(rec.grad()), numeric), 1e-6);
}

TEST(ConsistencyLoss, GroundTruthSideIsConstant) {
  auto a = torch::randn({2, 4, 3, 3}, torch::kFloat64).requires_grad_(true);
  auto b = torch::randn({2, 4, 3, 3}, torch::kFloat64).requires_grad_(true);
  auto l = consistency_loss(a, b);
  EXPECT_NEAR(l.item<double>(), (a - b).pow(2).mean().item<double>(), 1e-12);
  l.backward();
  EXPECT_TRUE(a.grad().defined());
  EXPECT_FALSE(b.grad().defined());
}

TEST(Lsgan, OptimaAndValues) {
  const auto ones = torch::ones({4}), zeros = torch::zeros({4});
  EXPECT_DOUBLE_EQ(lsgan_discriminator_loss(ones, zeros).item<double>(), 0.0);
  EXPECT_DOUBLE_EQ(lsgan_generator_loss(ones).item<double>(), 0.0);
  EXPECT_DOUBLE_EQ(lsgan_discriminator_loss(zeros, ones).item<double>(), 1.0);
  EXPECT_DOUBLE_EQ(lsgan_generator_loss(zeros).item<double>(), 0.5);
  // For a fixed generator the discriminator's best constant output is 1/2
  // when real and fake are indistinguishable.
  double best = 1e9, arg = -1;
  for (int i = 0; i <= 100; ++i) {
    const auto v = torch::full({1}, i / 100.0);
    const double l = lsgan_discriminator_loss(v, v).item<double>();
    if (l < best) best = l, arg = i / 100.0;
  }
  EXPECT_NEAR(arg, 0.5, 1e-12);
}

TEST(Quality, PsnrKnownValueAndIdentity) {
  Image a(16, 16, 3, 0.5f), b(16, 16, 3, 0.6f);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-5);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  EXPECT_GT(psnr(a, a), 0.0);
  EXPECT_DOUBLE_EQ(ssim(a, a), 1.0);
  const auto r = random_image(32, 32, 3, 5);
  EXPECT_NEAR(ssim(r, r), 1.0, 1e-12);
  EXPECT_THROW(psnr(a, Image(16, 9, 3)), ShapeError);
  EXPECT_THROW(ssim(Image(8, 8, 3), Image(8, 8, 3)), ShapeError);
}

TEST(Quality, MatchesOracles) {
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = random_image(24, 20, 3, 10 + trial);
    auto b = a;
    std::mt19937_64 rng(trial);
    std::normal_distribution<float> n(0.0f, 0.05f * (1 + trial));
    for (auto& v : b.pixels()) v = std::clamp(v + n(rng), 0.0f, 1.0f);
    EXPECT_LT(oracle::rel_err(psnr(a, b), oracle::psnr(a, b)), 1e-12);
    EXPECT_NEAR(ssim(a, b), oracle::ssim(a, b), 1e-9);
  }
}

TEST(Quality, MaskedPsnrOnlyReadsMaskedPatches) {
  Image a(32, 32, 3, 0.5f), b = a;
  for (int y = 0; y < 16; ++y)
    for (int x = 16; x < 32; ++x)
      for (int c = 0; c < 3; ++c) b.at(y, x, c) = 0.6f;
  OcclusionMask m(2, 2);
  EXPECT_TRUE(std::isinf(masked_psnr(a, b, m)));
  m.set(1, true);
  EXPECT_NEAR(masked_psnr(a, b, m), 20.0, 1e-5);
  m.set(1, false);
  m.set(2, true);
  EXPECT_TRUE(std::isinf(masked_psnr(a, b, m)));
}
