#include "latent_ofer/fer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "latent_ofer/checkpoint.hpp"
#include "latent_ofer/errors.hpp"
#include "latent_ofer/ranking.hpp"
#include "latent_ofer/tensor_utils.hpp"

namespace latent_ofer {

namespace nn = torch::nn;

std::string_view to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kFullLatents: return "full-latents";
    case FusionMode::kExtractedLatents: return "extracted-latents";
    case FusionMode::kCnnOnly: return "cnn";
    case FusionMode::kCnnFull: return "cnn+full-latents";
    case FusionMode::kCnnExtracted: return "cnn+extracted-latents";
  }
  return "unknown";
}

FusionMode parse_fusion_mode(std::string_view name) {
  for (auto m : {FusionMode::kFullLatents, FusionMode::kExtractedLatents, FusionMode::kCnnOnly,
                 FusionMode::kCnnFull, FusionMode::kCnnExtracted}) {
    if (to_string(m) == name) return m;
  }
  throw DomainError("unknown fusion mode '" + std::string(name) + "'");
}

int ExpressionDistribution::label() const {
  return static_cast<int>(std::max_element(probabilities.begin(), probabilities.end()) - probabilities.begin());
}

ExpressionDistribution distribution_from_logits(const torch::Tensor& logits) {
  auto p = torch::softmax(logits.detach().reshape({-1}).to(torch::kFloat64), 0).contiguous();
  if (p.numel() != kNumExpressions) throw ShapeError("expected 7 expression logits");
  ExpressionDistribution out;
  std::copy_n(p.data_ptr<double>(), kNumExpressions, out.probabilities.begin());
  return out;
}

int selection_count(int num_patches, double fraction) {
  return static_cast<int>(std::ceil(fraction * static_cast<double>(num_patches) - 1e-9));
}

LatentSelection select_latents(const LatentSet& latents, const AttentionMap& attention, double fraction) {
  if (attention.rows != latents.rows || attention.cols != latents.cols ||
      static_cast<int>(attention.weights.size()) != latents.size()) {
    throw ShapeError("select_latents: attention grid does not match the latent grid");
  }
  auto keys = top_k_indices(std::span<const double>(attention.weights),
                            static_cast<std::size_t>(selection_count(latents.size(), fraction)));
  std::sort(keys.begin(), keys.end());
  LatentSelection out;
  out.keys = keys;
  out.values = latents.vectors.index_select(0, torch::tensor(std::vector<int64_t>(keys.begin(), keys.end()),
                                                             torch::kInt64));
  return out;
}

torch::Tensor selection_mask(const torch::Tensor& attention, double fraction) {
  auto host = attention.detach().to(torch::kFloat64).contiguous();
  const auto b = host.size(0);
  const auto n = host.size(1);
  auto out = torch::zeros({b, n}, torch::kBool);
  auto acc = out.accessor<bool, 2>();
  const auto k = static_cast<std::size_t>(selection_count(static_cast<int>(n), fraction));
  for (int64_t i = 0; i < b; ++i) {
    std::span<const double> row(host.data_ptr<double>() + i * n, static_cast<std::size_t>(n));
    for (int idx : top_k_indices(row, k)) acc[i][idx] = true;
  }
  return out;
}

FerNetImpl::FerNetImpl(const FerConfig& config) : config_(config) {
  cnn_ = register_module("cnn", AttentionCnn(config.cnn));
  int in = 0;
  if (uses_cnn(config.mode)) in += config.cnn.out_channels();
  if (uses_latents(config.mode)) in += config.latent_dim;
  classifier_ = register_module("classifier", nn::Linear(in, kNumExpressions));
}

torch::Tensor FerNetImpl::pool_latents(const torch::Tensor& latents, const torch::Tensor& selected) {
  auto w = selected.to(latents.dtype()).unsqueeze(-1);  // [B,N,1]
  auto count = w.sum(1).clamp_min(1.0);                 // empty selection -> zero vector
  return (latents * w).sum(1) / count;
}

torch::Tensor FerNetImpl::head(const torch::Tensor& pooled_cnn, const torch::Tensor& pooled_latents) {
  std::vector<torch::Tensor> parts;
  if (uses_cnn(config_.mode)) {
    if (!pooled_cnn.defined()) throw ShapeError("fer head: missing CNN features");
    parts.push_back(pooled_cnn);
  }
  if (uses_latents(config_.mode)) {
    if (!pooled_latents.defined()) throw ShapeError("fer head: missing latent features");
    if (pooled_latents.size(-1) != config_.latent_dim) throw ShapeError("fer head: latent dimension mismatch");
    parts.push_back(pooled_latents);
  }
  return classifier_(torch::cat(parts, 1));
}

FerOutput FerNetImpl::forward(const torch::Tensor& images, const torch::Tensor& latents,
                              const torch::Tensor& key_attention) {
  auto cnn_out = cnn_->forward(images);
  torch::Tensor pooled_cnn;
  if (uses_cnn(config_.mode)) pooled_cnn = cnn_out.features.mean({2, 3});
  torch::Tensor pooled_latents;
  if (uses_latents(config_.mode)) {
    if (!latents.defined() || latents.dim() != 3 || latents.size(0) != images.size(0)) {
      throw ShapeError("fer: latents [B,N,D] required for mode " + std::string(to_string(config_.mode)));
    }
    if (latents.size(1) != cnn_out.attention.size(1)) {
      throw ShapeError("fer: latent grid and attention grid are not aligned");
    }
    torch::Tensor selected;
    if (extracts_latents(config_.mode)) {
      torch::Tensor keys = key_attention.defined() ? key_attention : cnn_out.attention;
      if (!uses_cnn(config_.mode) && !key_attention.defined()) {
        throw ShapeError("fer: latents-only extraction needs an external key attention");
      }
      selected = selection_mask(keys, config_.select_fraction);
    } else {
      selected = torch::ones({latents.size(0), latents.size(1)}, torch::kBool);
    }
    pooled_latents = pool_latents(latents, selected);
  }
  return FerOutput{head(pooled_cnn, pooled_latents), cnn_out.features, cnn_out.attention};
}

ExpressionDistribution fuse_and_classify(FerNet& net, const FeatureMap& features, const LatentSelection& selection) {
  torch::NoGradGuard no_grad;
  const bool was_training = net->is_training();
  net->eval();
  const auto mode = net->config().mode;
  torch::Tensor pooled_cnn;
  if (uses_cnn(mode)) pooled_cnn = features.values.mean({1, 2}).unsqueeze(0);
  torch::Tensor pooled_latents;
  if (uses_latents(mode)) {
    if (selection.keys.empty()) {
      pooled_latents = torch::zeros({1, net->config().latent_dim});
    } else {
      if (selection.values.size(1) != net->config().latent_dim) throw ShapeError("latent dimension mismatch");
      pooled_latents = selection.values.mean(0).unsqueeze(0);
    }
  }
  auto logits = net->head(pooled_cnn, pooled_latents);
  net->train(was_training);
  return distribution_from_logits(logits[0]);
}

AttentionMap fer_grad_cam(FerNet& net, const Image& image, int target_class, const torch::Tensor& latents,
                          const torch::Tensor& key_attention) {
  const bool was_training = net->is_training();
  net->eval();
  auto map = grad_cam(
      [&](const torch::Tensor& x) {
        auto out = net->forward(x, latents, key_attention);
        return CamForward{out.features, out.logits};
      },
      image, target_class);
  net->train(was_training);
  return map;
}

FerNet train_fer(const torch::Tensor& images, const torch::Tensor& labels, const torch::Tensor& latents,
                 const torch::Tensor& key_attention, const FerConfig& config, const FerTrainConfig& train,
                 FerTrainingLog* log) {
  const auto n = images.size(0);
  if (n == 0 || labels.size(0) != n) throw ShapeError("train_fer: images and labels disagree");
  if (uses_latents(config.mode) && (!latents.defined() || latents.size(0) != n)) {
    throw ShapeError("train_fer: latents [N,T,D] required for mode " + std::string(to_string(config.mode)));
  }
  torch::manual_seed(train.seed);
  FerNet net(config);
  torch::optim::Adam opt(net->parameters(),
                         torch::optim::AdamOptions(train.learning_rate).weight_decay(train.weight_decay));
  net->train();
  std::vector<int64_t> order(n);
  for (int epoch = 0; epoch < train.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(train.seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int64_t correct = 0;
    for (int64_t start = 0; start < n; start += train.batch_size) {
      const auto stop = std::min<int64_t>(n, start + train.batch_size);
      auto idx = torch::tensor(std::vector<int64_t>(order.begin() + start, order.begin() + stop), torch::kInt64);
      auto x = images.index_select(0, idx);
      auto y = labels.index_select(0, idx);
      torch::Tensor z, keys;
      if (latents.defined()) z = latents.index_select(0, idx);
      if (key_attention.defined()) keys = key_attention.index_select(0, idx);
      opt.zero_grad();
      auto out = net->forward(x, z, keys);
      auto loss = torch::nn::functional::cross_entropy(out.logits, y);
      loss.backward();
      opt.step();
      loss_sum += loss.item<double>() * static_cast<double>(stop - start);
      correct += out.logits.argmax(1).eq(y).sum().item<int64_t>();
    }
    if (log) {
      log->epoch_loss.push_back(loss_sum / static_cast<double>(n));
      log->epoch_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(n));
    }
  }
  net->eval();
  return net;
}

void save_fer(FerNet& net, const std::filesystem::path& path) {
  const auto& c = net->config();
  Checkpoint ckpt;
  ckpt.meta = {{"kind", "fer"},
               {"mode", std::string(to_string(c.mode))},
               {"latent_dim", c.latent_dim},
               {"select_fraction", c.select_fraction},
               {"cnn", {{"in_channels", c.cnn.in_channels},
                        {"widths", c.cnn.widths},
                        {"reduction", c.cnn.reduction},
                        {"spatial_kernel", c.cnn.spatial_kernel}}}};
  append_module(ckpt, *net);
  save_checkpoint(path, ckpt);
}

FerNet load_fer(const std::filesystem::path& path) {
  const auto ckpt = load_checkpoint(path);
  if (ckpt.meta.value("kind", "") != "fer") throw ModelError("fer", "not an expression checkpoint: " + path.string());
  FerConfig c;
  c.mode = parse_fusion_mode(ckpt.meta.at("mode").get<std::string>());
  c.latent_dim = ckpt.meta.at("latent_dim");
  c.select_fraction = ckpt.meta.at("select_fraction");
  const auto& cnn = ckpt.meta.at("cnn");
  c.cnn.in_channels = cnn.at("in_channels");
  c.cnn.widths = cnn.at("widths").get<std::vector<int>>();
  c.cnn.reduction = cnn.at("reduction");
  c.cnn.spatial_kernel = cnn.at("spatial_kernel");
  FerNet net(c);
  restore_module(ckpt, *net);
  net->eval();
  return net;
}

}  // namespace latent_ofer
