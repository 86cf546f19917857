#include <gtest/gtest.h>

#include <random>

#include "latent_ofer/self_assembly.hpp"
#include "oracles.hpp"

using namespace latent_ofer;

namespace {

// [C,R,Cc] tensor to per-patch rows in raster order.
oracle::Mat grid_rows(const torch::Tensor& features) {
  return oracle::to_mat(features.flatten(1).t());
}

OcclusionMask random_mask(int rows, int cols, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution b(p);
  OcclusionMask m(rows, cols);
  for (int i = 0; i < m.size(); ++i) m.set(i, b(rng));
  return m;
}

}  // namespace

TEST(Similarity, BasicCases) {
  const std::vector<double> p{1.0, 2.0, 3.0};
  EXPECT_NEAR(similarity(p, p), 1.0, 1e-12);
  const std::vector<double> scaled{2.0, 4.0, 6.0};
  EXPECT_NEAR(similarity(p, scaled), 1.0, 1e-12);
  const std::vector<double> neg{-1.0, -2.0, -3.0};
  EXPECT_NEAR(similarity(p, neg), -1.0, 1e-12);
  const std::vector<double> ortho{3.0, 0.0, -1.0};
  EXPECT_NEAR(similarity(p, ortho), 0.0, 1e-12);
  const std::vector<double> zero{0.0, 0.0, 0.0};
  EXPECT_EQ(similarity(p, zero), 0.0);
}

TEST(Similarity, TensorAndSpanAgreeWithOracle) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> p(8), q(8);
    for (auto& v : p) v = n(rng);
    for (auto& v : q) v = n(rng);
    const double want = oracle::cross_correlation(p, q);
    EXPECT_NEAR(similarity(p, q), want, 1e-12);
    const auto tp = torch::tensor(p, torch::kFloat64), tq = torch::tensor(q, torch::kFloat64);
    EXPECT_NEAR(similarity(tp, tq).item<double>(), want, 1e-10);
  }
}

TEST(SymmetricPatch, MirrorNeighborhoodMean) {
  torch::manual_seed(2);
  const auto f = torch::randn({4, 5, 6}, torch::kFloat64);
  AssemblyState s(f, OcclusionMask(5, 6));
  const auto rows = grid_rows(f);
  for (int i = 0; i < 30; ++i) {
    EXPECT_LT(oracle::rel_err(oracle::to_vec(symmetric_patch(s, i)), oracle::mirror_mean(rows, 5, 6, i)), 1e-12)
        << "index " << i;
  }
}

TEST(FindKnownPatch, PicksMostSimilarUnmaskedPatch) {
  auto f = torch::zeros({2, 2, 2}, torch::kFloat64);
  // Patches: 0=(1,0) 1=(0,1) 2=(1,1) 3=(1,0.1)
  f.index_put_({torch::indexing::Slice(), 0, 0}, torch::tensor({1.0, 0.0}, torch::kFloat64));
  f.index_put_({torch::indexing::Slice(), 0, 1}, torch::tensor({0.0, 1.0}, torch::kFloat64));
  f.index_put_({torch::indexing::Slice(), 1, 0}, torch::tensor({1.0, 1.0}, torch::kFloat64));
  f.index_put_({torch::indexing::Slice(), 1, 1}, torch::tensor({1.0, 0.1}, torch::kFloat64));
  OcclusionMask m(2, 2);
  m.set(3, true);
  AssemblyState s(f, m);
  const auto k = find_known_patch(s, 3);
  EXPECT_EQ(k.index, 0);
  EXPECT_NEAR(k.similarity.item<double>(), oracle::cross_correlation({1.0, 0.1}, {1.0, 0.0}), 1e-12);

  OcclusionMask all(2, 2);
  for (int i = 0; i < 4; ++i) all.set(i, true);
  AssemblyState full(f, all);
  EXPECT_THROW(find_known_patch(full, 0), DomainError);
}

TEST(FindKnownPatch, TiesGoToLowerIndex) {
  const auto f = torch::ones({3, 3, 3}, torch::kFloat64);
  OcclusionMask m(3, 3);
  m.set(0, true);
  m.set(4, true);
  AssemblyState s(f, m);
  EXPECT_EQ(find_known_patch(s, 4).index, 1);
}

TEST(SelfAssemblyStep, FirstStepHasNoPreviousTerm) {
  torch::manual_seed(3);
  const auto f = torch::rand({5, 4, 4}, torch::kFloat64);
  OcclusionMask m(4, 4);
  m.set(5, true);
  m.set(10, true);
  AssemblyState s(f, m);
  const auto first = self_assembly_step(s, 0);
  EXPECT_EQ(first.index, 5);
  EXPECT_EQ(first.weight_previous, 0.0);
  EXPECT_NEAR(first.weight_sym + first.weight_known, 1.0, 1e-12);
  const auto second = self_assembly_step(s, 1);
  EXPECT_EQ(second.index, 10);
  EXPECT_GT(second.weight_previous, 0.0);
  EXPECT_NEAR(second.weight_sym + second.weight_known + second.weight_previous, 1.0, 1e-12);
}

TEST(SelfAssemblyStep, EqualSimilaritiesGiveEqualWeights) {
  // Constant positive grid: every similarity is 1, so the three sources
  // share the weight equally on the second step.
  const auto f = torch::full({3, 3, 4}, 0.5, torch::kFloat64);
  OcclusionMask m(3, 4);
  m.set(1, true);
  m.set(6, true);
  AssemblyState s(f, m);
  self_assembly_step(s, 0);
  const auto step = self_assembly_step(s, 1);
  EXPECT_NEAR(step.weight_sym, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(step.weight_known, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(step.weight_previous, 1.0 / 3.0, 1e-12);
  EXPECT_TRUE(torch::allclose(step.patch, torch::full({3}, 0.5, torch::kFloat64)));
}

TEST(SelfAssemblyStep, ZeroReferenceFallsBackToReference) {
  auto f = torch::rand({3, 3, 3}, torch::kFloat64) + 0.1;
  f.index_put_({torch::indexing::Slice(), 1, 1}, 0.0);
  OcclusionMask m(3, 3);
  m.set(4, true);
  AssemblyState s(f, m);
  const auto step = self_assembly_step(s, 0);
  EXPECT_TRUE(step.fallback);
  EXPECT_EQ(step.weight_sym + step.weight_known + step.weight_previous, 0.0);
  EXPECT_TRUE(torch::equal(step.patch, torch::zeros({3}, torch::kFloat64)));
}

TEST(SelfAssemblyStep, NegativeSimilaritiesAreClamped) {
  // Known patches all point opposite the reference; only the mirror term
  // can contribute, and it reads the reference itself on the center column.
  auto f = torch::full({2, 3, 3}, -1.0, torch::kFloat64);
  f.index_put_({torch::indexing::Slice(), 1, 1}, 1.0);
  OcclusionMask m(3, 3);
  m.set(4, true);
  AssemblyState s(f, m);
  const auto step = self_assembly_step(s, 0);
  EXPECT_EQ(step.weight_known, 0.0);
  EXPECT_TRUE(step.fallback);
}

TEST(SelfAssemble, MatchesSweepOracle) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int rows = 3 + trial % 4, cols = 3 + (trial / 4) % 4, ch = 2 + trial % 5;
    torch::manual_seed(trial);
    const auto f = torch::randn({ch, rows, cols}, torch::kFloat64) + (trial % 3 == 0 ? 0.0 : 0.5);
    auto m = random_mask(rows, cols, 0.35, rng);
    if (m.all()) m.set(0, false);
    const auto got = self_assemble(f.unsqueeze(0), {m})[0];
    std::vector<bool> masked(rows * cols);
    for (int i = 0; i < rows * cols; ++i) masked[i] = m[i];
    const auto want = oracle::assemble(grid_rows(f), rows, cols, masked);
    const auto got_rows = grid_rows(got);
    for (int i = 0; i < rows * cols; ++i) {
      EXPECT_LT(oracle::rel_err(got_rows[i], want[i]), 1e-9) << "trial " << trial << " patch " << i;
    }
  }
}

TEST(SelfAssemble, UnmaskedPatchesUntouchedAndEdgeMasksPassThrough) {
  torch::manual_seed(5);
  const auto f = torch::randn({2, 4, 6, 6});
  OcclusionMask m(6, 6);
  m.set(7, true);
  m.set(8, true);
  OcclusionMask none(6, 6);
  const auto out = self_assemble(f, {m, none});
  EXPECT_TRUE(torch::equal(out[1], f[1]));
  for (int i = 0; i < 36; ++i) {
    if (m[i]) continue;
    EXPECT_TRUE(torch::equal(out[0].flatten(1).select(1, i), f[0].flatten(1).select(1, i)));
  }
  OcclusionMask all(6, 6);
  for (int i = 0; i < 36; ++i) all.set(i, true);
  EXPECT_TRUE(torch::equal(self_assemble(f, {all, all}), f));
}

TEST(SelfAssemble, GradientFlowsToInputs) {
  torch::manual_seed(6);
  auto f = torch::rand({1, 3, 4, 4}, torch::kFloat64).requires_grad_(true);
  OcclusionMask m(4, 4);
  m.set(5, true);
  self_assemble(f, {m}).sum().backward();
  ASSERT_TRUE(f.grad().defined());
  EXPECT_GT(f.grad().abs().sum().item<double>(), 0.0);
}
