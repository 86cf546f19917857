#include "latent_ofer/encoder.hpp"

#include <cmath>

#include "latent_ofer/tensor_utils.hpp"

namespace latent_ofer {

namespace nn = torch::nn;

TransformerBlockImpl::TransformerBlockImpl(int dim, int heads, int mlp_ratio) : heads_(heads) {
  if (dim % heads != 0) throw ShapeError("latent dim must be divisible by the head count");
  norm1_ = register_module("norm1", nn::LayerNorm(nn::LayerNormOptions({dim})));
  qkv_ = register_module("qkv", nn::Linear(dim, 3 * dim));
  proj_ = register_module("proj", nn::Linear(dim, dim));
  norm2_ = register_module("norm2", nn::LayerNorm(nn::LayerNormOptions({dim})));
  fc1_ = register_module("fc1", nn::Linear(dim, dim * mlp_ratio));
  fc2_ = register_module("fc2", nn::Linear(dim * mlp_ratio, dim));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x) {
  const auto b = x.size(0);
  const auto n = x.size(1);
  const auto d = x.size(2);
  const auto head_dim = d / heads_;
  auto qkv = qkv_(norm1_(x)).reshape({b, n, 3, heads_, head_dim}).permute({2, 0, 3, 1, 4});
  auto q = qkv[0];
  auto k = qkv[1];
  auto v = qkv[2];
  auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim));
  auto mixed = torch::matmul(scores.softmax(-1), v).transpose(1, 2).reshape({b, n, d});
  auto h = x + proj_(mixed);
  return h + fc2_(torch::gelu(fc1_(norm2_(h))));
}

PatchEmbedderImpl::PatchEmbedderImpl(const VitConfig& config) : config_(config) {
  if (config.image_size % config.patch_size != 0) throw ShapeError("image size must be patch-aligned");
  embed_ = register_module("embed", nn::Linear(config.token_width(), config.dim));
  position_ = register_parameter("position", torch::randn({config.tokens(), config.dim}) * 0.02,
                                 config.positional);
  if (!config.positional) position_.zero_();
  mask_token_ = register_parameter("mask_token", torch::randn({config.dim}) * 0.02);
  blocks_ = register_module("blocks", nn::ModuleList());
  for (int i = 0; i < config.depth; ++i) {
    blocks_->push_back(TransformerBlock(config.dim, config.heads, config.mlp_ratio));
  }
  norm_ = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({config.dim})));
}

torch::Tensor PatchEmbedderImpl::forward(const torch::Tensor& tokens, const torch::Tensor& mask, int depth) {
  if (tokens.dim() != 3 || tokens.size(1) != config_.tokens() || tokens.size(2) != config_.token_width()) {
    throw ShapeError("token tensor does not match the encoder grid");
  }
  auto x = embed_(tokens);
  if (mask.defined()) {
    auto m = mask.to(x.dtype()).unsqueeze(-1);
    x = x * (1 - m) + mask_token_.view({1, 1, -1}) * m;
  }
  x = x + position_.unsqueeze(0);
  const int stop = depth < 0 ? config_.depth : std::min(depth, config_.depth);
  for (int i = 0; i < stop; ++i) x = blocks_[i]->as<TransformerBlock>()->forward(x);
  return depth < 0 ? norm_(x) : x;
}

void check_latent_dim(const LatentSet& latents, int expected_dim) {
  if (!latents.vectors.defined() || latents.vectors.dim() != 2 || latents.dim() != expected_dim) {
    throw ShapeError("latent dimension mismatch: expected " + std::to_string(expected_dim));
  }
}

LatentSet embed_patches(PatchEmbedder& embedder, const PatchGrid& grid, const OcclusionMask* mask, int depth) {
  const auto& cfg = embedder->config();
  if (grid.patch_size != cfg.patch_size || grid.grid_rows != cfg.grid() || grid.grid_cols != cfg.grid() ||
      grid.channels() != cfg.channels) {
    throw ShapeError("patch grid does not match the encoder configuration");
  }
  if (mask && (mask->rows() != grid.grid_rows || mask->cols() != grid.grid_cols)) {
    throw ShapeError("mask does not match the patch grid");
  }
  torch::NoGradGuard no_grad;
  const bool was_training = embedder->is_training();
  embedder->eval();
  auto tokens = to_patch_tokens(to_tensor(reassemble(grid)).unsqueeze(0), grid.patch_size);
  torch::Tensor m;
  if (mask) m = mask_tensor(*mask).unsqueeze(0);
  auto out = embedder->forward(tokens, m, depth);
  embedder->train(was_training);
  return LatentSet{out[0].contiguous(), grid.grid_rows, grid.grid_cols,
                   mask ? LatentSource::kReconstructionPass : LatentSource::kOccludedInput};
}

AttentionCnnImpl::AttentionCnnImpl(const CnnConfig& config) : config_(config) {
  stages_ = nn::Sequential();
  int in = config.in_channels;
  for (int width : config.widths) {
    stages_->push_back(nn::Conv2d(
        nn::Conv2dOptions(in, width, 3).stride(2).padding(1).padding_mode(torch::kReplicate).bias(false)));
    stages_->push_back(nn::BatchNorm2d(width));
    stages_->push_back(nn::ReLU());
    stages_->push_back(nn::Conv2d(
        nn::Conv2dOptions(width, width, 3).padding(1).padding_mode(torch::kReplicate).bias(false)));
    stages_->push_back(nn::BatchNorm2d(width));
    stages_->push_back(nn::ReLU());
    in = width;
  }
  register_module("stages", stages_);
  const int c = config.out_channels();
  const int hidden = std::max(1, c / config.reduction);
  channel_mlp_ = register_module("channel_mlp", nn::Sequential(nn::Linear(c, hidden), nn::ReLU(),
                                                              nn::Linear(hidden, c)));
  spatial_conv_ = register_module(
      "spatial_conv", nn::Conv2d(nn::Conv2dOptions(2, 1, config.spatial_kernel)
                                     .padding(config.spatial_kernel / 2)
                                     .padding_mode(torch::kReplicate)
                                     .bias(false)));
}

CnnOutput AttentionCnnImpl::forward(const torch::Tensor& images) {
  auto x = stages_->forward(images);
  const auto b = x.size(0);
  const auto c = x.size(1);
  auto channel = torch::sigmoid(channel_mlp_->forward(x.mean({2, 3})) + channel_mlp_->forward(x.amax({2, 3})));
  x = x * channel.view({b, c, 1, 1});
  auto pooled = torch::cat({x.mean(1, true), x.amax(1, true)}, 1);
  auto spatial = torch::sigmoid(spatial_conv_(pooled));
  x = x * spatial;
  auto flat = spatial.flatten(1);
  return CnnOutput{x, flat, flat / flat.sum(1, true)};
}

AttentionMap attention_row(const torch::Tensor& attention, int64_t b, int rows, int cols) {
  auto row = attention[b].detach().to(torch::kFloat64).contiguous();
  std::vector<double> w(row.data_ptr<double>(), row.data_ptr<double>() + row.numel());
  return AttentionMap::normalized(rows, cols, std::move(w));
}

CnnResult cnn_forward(AttentionCnn& cnn, const Image& image) {
  torch::NoGradGuard no_grad;
  const bool was_training = cnn->is_training();
  cnn->eval();
  auto out = cnn->forward(to_tensor(image).unsqueeze(0));
  cnn->train(was_training);
  const int rows = static_cast<int>(out.features.size(2));
  const int cols = static_cast<int>(out.features.size(3));
  return CnnResult{FeatureMap{out.features[0].contiguous()}, attention_row(out.attention, 0, rows, cols)};
}

}  // namespace latent_ofer
