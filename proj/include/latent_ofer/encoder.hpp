#pragma once

#include <torch/torch.h>

#include <vector>

#include "latent_ofer/image.hpp"

namespace latent_ofer {

struct VitConfig {
  int image_size = 96;
  int patch_size = 16;
  int channels = 3;
  int dim = 64;
  int depth = 4;
  int heads = 4;
  int mlp_ratio = 2;
  // Disabling positional embeddings makes the encoder permutation-equivariant.
  bool positional = true;

  int grid() const noexcept { return image_size / patch_size; }
  int tokens() const noexcept { return grid() * grid(); }
  int token_width() const noexcept { return channels * patch_size * patch_size; }
};

// Pre-norm transformer block.
class TransformerBlockImpl : public torch::nn::Module {
 public:
  TransformerBlockImpl(int dim, int heads, int mlp_ratio);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  int heads_;
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Linear qkv_{nullptr}, proj_{nullptr}, fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(TransformerBlock);

// Linear patch projection, learned positional embedding, a learned mask
// token substituted for masked patches, and a stack of transformer blocks.
class PatchEmbedderImpl : public torch::nn::Module {
 public:
  explicit PatchEmbedderImpl(const VitConfig& config);

  // tokens [B,N,C*P*P]; mask [B,N] bool (true = replace with mask token)
  // or undefined. depth < 0 runs every block plus the final norm;
  // depth k in [0, config.depth] returns the residual stream after k blocks.
  torch::Tensor forward(const torch::Tensor& tokens, const torch::Tensor& mask = {}, int depth = -1);

  const VitConfig& config() const noexcept { return config_; }

 private:
  VitConfig config_;
  torch::nn::Linear embed_{nullptr};
  torch::Tensor position_;
  torch::Tensor mask_token_;
  torch::nn::ModuleList blocks_;
  torch::nn::LayerNorm norm_{nullptr};
};
TORCH_MODULE(PatchEmbedder);

enum class LatentSource { kOccludedInput, kReconstructionPass };

// Per-patch latent vectors; row i belongs to patch i.
struct LatentSet {
  torch::Tensor vectors;  // [N,D] float
  int rows = 0;
  int cols = 0;
  LatentSource source = LatentSource::kOccludedInput;

  int size() const { return static_cast<int>(vectors.size(0)); }
  int dim() const { return static_cast<int>(vectors.size(1)); }
};

// Throws ShapeError unless the set has `expected_dim` columns.
void check_latent_dim(const LatentSet& latents, int expected_dim);

// Eval-mode embedding of a patch grid. `mask` may be null.
LatentSet embed_patches(PatchEmbedder& embedder, const PatchGrid& grid, const OcclusionMask* mask = nullptr,
                        int depth = -1);

struct CnnConfig {
  int in_channels = 3;
  std::vector<int> widths{16, 32, 64, 64};
  int reduction = 4;
  int spatial_kernel = 7;

  int out_channels() const { return widths.back(); }
  int downsample() const { return 1 << widths.size(); }
};

struct CnnOutput {
  torch::Tensor features;   // [B,C,r,c] attention-refined
  torch::Tensor spatial;    // [B,r*c] raw sigmoid spatial attention
  torch::Tensor attention;  // [B,r*c] spatial attention normalized to sum 1
};

// Strided conv stages (replicate padding) followed by channel and spatial
// attention. Replicate padding keeps a constant image constant at every
// stage, so the spatial attention of a constant image is uniform.
class AttentionCnnImpl : public torch::nn::Module {
 public:
  explicit AttentionCnnImpl(const CnnConfig& config);
  CnnOutput forward(const torch::Tensor& images);

  const CnnConfig& config() const noexcept { return config_; }

 private:
  CnnConfig config_;
  torch::nn::Sequential stages_{nullptr};
  torch::nn::Sequential channel_mlp_{nullptr};
  torch::nn::Conv2d spatial_conv_{nullptr};
};
TORCH_MODULE(AttentionCnn);

struct FeatureMap {
  torch::Tensor values;  // [C,r,c]

  int channels() const { return static_cast<int>(values.size(0)); }
  int rows() const { return static_cast<int>(values.size(1)); }
  int cols() const { return static_cast<int>(values.size(2)); }
};

struct CnnResult {
  FeatureMap features;
  AttentionMap attention;
};

// Eval-mode forward pass on one image.
CnnResult cnn_forward(AttentionCnn& cnn, const Image& image);

// Row b of a [B,N] tensor as an AttentionMap.
AttentionMap attention_row(const torch::Tensor& attention, int64_t b, int rows, int cols);

}  // namespace latent_ofer
