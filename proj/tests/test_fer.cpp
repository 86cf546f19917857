#include <gtest/gtest.h>

#include <random>

#include "helpers.hpp"
#include "latent_ofer/fer.hpp"
#include "latent_ofer/ranking.hpp"
#include "latent_ofer/tensor_utils.hpp"
#include "oracles.hpp"

using namespace latent_ofer;
using testing_util::random_image;

namespace {

LatentSet random_latents(int rows, int cols, int dim, std::uint64_t seed) {
  torch::manual_seed(seed);
  return LatentSet{torch::randn({rows * cols, dim}), rows, cols};
}

FerNet make_net(FusionMode mode, std::uint64_t seed = 1) {
  torch::manual_seed(seed);
  FerConfig c;
  c.latent_dim = 8;
  c.mode = mode;
  FerNet net(c);
  net->eval();
  return net;
}

}  // namespace

TEST(SelectLatents, CountIsCeilingOfHalf) {
  EXPECT_EQ(selection_count(36), 18);
  EXPECT_EQ(selection_count(9), 5);
  EXPECT_EQ(selection_count(1), 1);
  EXPECT_EQ(selection_count(10, 0.25), 3);
}

TEST(SelectLatents, UniformAttentionTakesLowestIndices) {
  const auto l = random_latents(3, 3, 4, 1);
  const auto s = select_latents(l, AttentionMap::uniform(3, 3));
  EXPECT_EQ(s.keys, (std::vector<int>{0, 1, 2, 3, 4}));
  EXPECT_EQ(s.rule, "top-50%-rank");
  for (int k = 0; k < 5; ++k) EXPECT_TRUE(torch::equal(s.values[k], l.vectors[s.keys[k]]));
}

TEST(SelectLatents, MatchesSortOracle) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> coarse(0, 5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> scores(36);
    // Coarse integer scores force plenty of ties at the cutoff.
    for (auto& s : scores) s = coarse(rng) + 0.5;
    const auto att = AttentionMap::normalized(6, 6, scores);
    const auto s = select_latents(random_latents(6, 6, 4, trial), att);
    auto want = oracle::top_k(att.weights, 18);
    std::sort(want.begin(), want.end());
    EXPECT_EQ(s.keys, want);
  }
}

TEST(SelectLatents, InvariantUnderMonotoneRescaling) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::vector<double> scores(25);
  for (auto& s : scores) s = u(rng);
  std::vector<double> squared = scores;
  for (auto& s : squared) s = s * s * 10.0;
  const auto l = random_latents(5, 5, 3, 3);
  EXPECT_EQ(select_latents(l, AttentionMap::normalized(5, 5, scores)).keys,
            select_latents(l, AttentionMap::normalized(5, 5, squared)).keys);
}

TEST(SelectLatents, BatchedMaskAgreesWithSingleRule) {
  torch::manual_seed(4);
  const auto att = torch::softmax(torch::randn({5, 36}, torch::kFloat64), 1);
  const auto m = selection_mask(att);
  for (int b = 0; b < 5; ++b) {
    const auto w = oracle::to_vec(att[b]);
    const auto s = select_latents(random_latents(6, 6, 2, b), AttentionMap{6, 6, w});
    std::vector<int> from_mask;
    for (int i = 0; i < 36; ++i) {
      if (m[b][i].item<bool>()) from_mask.push_back(i);
    }
    EXPECT_EQ(from_mask, s.keys);
  }
  EXPECT_THROW(select_latents(random_latents(2, 2, 2, 5), AttentionMap::uniform(3, 3)), ShapeError);
}

TEST(PoolLatents, MeanOfSelectedRowsAndZeroForEmpty) {
  const auto latents = torch::tensor({{{1.0f, 2.0f}, {3.0f, 4.0f}, {5.0f, 6.0f}}});
  const auto sel = torch::tensor({{true, false, true}});
  EXPECT_TRUE(torch::allclose(FerNetImpl::pool_latents(latents, sel), torch::tensor({{3.0f, 4.0f}})));
  const auto none = torch::zeros({1, 3}, torch::kBool);
  EXPECT_TRUE(torch::equal(FerNetImpl::pool_latents(latents, none), torch::zeros({1, 2})));
}

TEST(Distribution, SoftmaxSumsToOne) {
  torch::manual_seed(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto d = distribution_from_logits(torch::randn({7}) * 5.0);
    double s = 0.0;
    for (double p : d.probabilities) {
      EXPECT_GE(p, 0.0);
      s += p;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  auto logits = torch::zeros({7});
  logits[3] = 10.0;
  EXPECT_EQ(distribution_from_logits(logits).label(), 3);
}

TEST(FusionModes, NamesRoundTrip) {
  for (auto m : {FusionMode::kFullLatents, FusionMode::kExtractedLatents, FusionMode::kCnnOnly, FusionMode::kCnnFull,
                 FusionMode::kCnnExtracted}) {
    EXPECT_EQ(parse_fusion_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_fusion_mode("everything"), DomainError);
}

TEST(FerNet, LatentBranchIsWiredOnlyWhenUsed) {
  const auto img = to_batch({random_image(96, 96, 3, 6)});
  torch::manual_seed(6);
  const auto a = torch::randn({1, 36, 8});
  const auto b = torch::randn({1, 36, 8});
  torch::NoGradGuard g;
  auto cnn_only = make_net(FusionMode::kCnnOnly);
  EXPECT_TRUE(torch::equal(cnn_only->forward(img, a).logits, cnn_only->forward(img, b).logits));
  for (auto mode : {FusionMode::kCnnFull, FusionMode::kCnnExtracted}) {
    auto net = make_net(mode);
    EXPECT_FALSE(torch::allclose(net->forward(img, a).logits, net->forward(img, b).logits));
  }
  auto full = make_net(FusionMode::kCnnFull);
  EXPECT_THROW(full->forward(img), ShapeError);
}

TEST(FerNet, ExtractedModeIgnoresUnselectedLatents) {
  const auto img = to_batch({random_image(96, 96, 3, 7)});
  torch::manual_seed(7);
  auto net = make_net(FusionMode::kCnnExtracted);
  torch::NoGradGuard g;
  auto latents = torch::randn({1, 36, 8});
  const auto out = net->forward(img, latents);
  const auto keep = selection_mask(out.attention);
  auto changed = latents.clone();
  for (int i = 0; i < 36; ++i) {
    if (!keep[0][i].item<bool>()) changed[0][i] += 5.0;
  }
  EXPECT_TRUE(torch::allclose(net->forward(img, changed).logits, out.logits, 1e-5, 1e-6));
}

TEST(FerNet, LatentsOnlyModesNeedKeyAttentionForExtraction) {
  const auto img = to_batch({random_image(96, 96, 3, 8)});
  torch::NoGradGuard g;
  auto net = make_net(FusionMode::kExtractedLatents);
  const auto latents = torch::randn({1, 36, 8});
  const auto key = torch::full({1, 36}, 1.0 / 36);
  const auto out = net->forward(img, latents, key);
  EXPECT_EQ(out.logits.sizes(), (std::vector<int64_t>{1, 7}));
}

TEST(GradCam, PeakedFeatureGivesPeakedMap) {
  // Linear toy model: logit_k = sum of features weighted per channel.
  auto model = [](const torch::Tensor& x) {
    auto f = torch::nn::functional::avg_pool2d(x, torch::nn::functional::AvgPool2dFuncOptions(16));
    auto logits = torch::stack({f.sum(), -f.sum()}).unsqueeze(0);
    return CamForward{f, logits};
  };
  Image img(64, 64, 3, 0.0f);
  for (int y = 16; y < 32; ++y)
    for (int x = 32; x < 48; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = 1.0f;
  const auto cam = grad_cam(model, img, 0);
  EXPECT_EQ(cam.rows, 4);
  EXPECT_NEAR(cam.weights[1 * 4 + 2], 1.0, 1e-9);
  // The opposite class has negative weights everywhere: ReLU zeroes the map.
  const auto neg = grad_cam(model, img, 1);
  for (double w : neg.weights) EXPECT_DOUBLE_EQ(w, 1.0 / 16);
  EXPECT_THROW(grad_cam(model, img, 2), DomainError);
}

TEST(GradCam, TrainedNetMapIsNormalized) {
  auto net = make_net(FusionMode::kCnnOnly);
  const auto cam = fer_grad_cam(net, random_image(96, 96, 3, 9), 4);
  EXPECT_EQ(cam.rows, 6);
  EXPECT_NO_THROW(cam.validate(1e-6));
}

TEST(TrainFer, LearnsASeparableToyProblemAndRoundTrips) {
  // Class = which quadrant is bright.
  std::vector<Image> imgs;
  std::vector<int64_t> labels;
  for (int i = 0; i < 64; ++i) {
    const int k = i % 4;
    Image img(96, 96, 3, 0.1f);
    for (int y = (k / 2) * 48; y < (k / 2) * 48 + 48; ++y)
      for (int x = (k % 2) * 48; x < (k % 2) * 48 + 48; ++x)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = 0.9f;
    imgs.push_back(img);
    labels.push_back(k);
  }
  const auto x = to_batch(imgs);
  const auto y = torch::tensor(labels);
  FerConfig cfg;
  cfg.mode = FusionMode::kCnnOnly;
  FerTrainConfig train;
  train.epochs = 8;
  train.batch_size = 16;
  FerTrainingLog log;
  auto net = train_fer(x, y, {}, {}, cfg, train, &log);
  EXPECT_GT(log.epoch_accuracy.back(), 0.9);
  EXPECT_LT(log.epoch_loss.back(), log.epoch_loss.front());

  testing_util::TempDir dir("fer");
  save_fer(net, dir / "f.ckpt");
  auto back = load_fer(dir / "f.ckpt");
  torch::NoGradGuard g;
  EXPECT_TRUE(torch::equal(net->forward(x.slice(0, 0, 4)).logits, back->forward(x.slice(0, 0, 4)).logits));
  EXPECT_THROW(train_fer(x, y, {}, {}, FerConfig{CnnConfig{}, 8, FusionMode::kCnnFull}, train), ShapeError);
}
