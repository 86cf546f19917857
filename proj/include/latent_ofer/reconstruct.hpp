#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "latent_ofer/encoder.hpp"
#include "latent_ofer/fer.hpp"
#include "latent_ofer/image.hpp"

namespace latent_ofer {

// ---------------------------------------------------------------------------
// Loss stack

struct LossWeights {
  double re = 1.0;
  double c = 0.01;
  double sc = 1.0;
  double d = 0.002;

  void validate() const;
};

// Individual loss terms. Tensors so the weighted sum stays differentiable.
struct LossTerms {
  torch::Tensor re, c, sc, d, df;
};

// L = re*L_re + c*L_c + sc*L_sc + d*(L_d + L_df). Throws DomainError on a
// non-finite term.
torch::Tensor total_loss(const LossTerms& parts, const LossWeights& weights);
double total_loss(double re, double c, double sc, double d, double df, const LossWeights& weights);

inline constexpr double kMaskedPixelWeight = 6.0;

// Mean absolute error, pixels inside the mask weighted 6, outside 1,
// normalized by the pixel count. pixel_mask [B,1,H,W] with 1 = masked.
torch::Tensor reconstruction_loss(const torch::Tensor& z_gt, const torch::Tensor& z_rec,
                                  const torch::Tensor& pixel_mask);

// Mean squared difference of frozen-encoder features; the ground-truth side
// is treated as a constant.
torch::Tensor consistency_loss(const torch::Tensor& rec_features, const torch::Tensor& gt_features);

// Least-squares adversarial objectives (targets 1 = real, 0 = fake).
torch::Tensor lsgan_discriminator_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits);
torch::Tensor lsgan_generator_loss(const torch::Tensor& fake_logits);

inline constexpr double kLogClamp = 1e-12;

// -sum_c p_c(gt) log p_c(rec), averaged over the batch. Inputs are
// probability rows [B,7]; each must sum to 1 within 1e-5.
torch::Tensor semantic_consistency(const torch::Tensor& p_gt, const torch::Tensor& p_rec);
// Same through a frozen CNN-only expression network.
torch::Tensor semantic_consistency_loss(const torch::Tensor& z_gt, const torch::Tensor& z_rec, FerNet& frozen);

// ---------------------------------------------------------------------------
// Networks

// Masked-token transformer reconstruction: masked patches enter as the
// mask token, every token is decoded back to pixels.
class CoarseReconstructorImpl : public torch::nn::Module {
 public:
  explicit CoarseReconstructorImpl(const VitConfig& config);

  struct Output {
    torch::Tensor images;   // [B,C,H,W] in [0,1]
    torch::Tensor latents;  // [B,N,D]
  };
  Output forward(const torch::Tensor& images, const torch::Tensor& patch_mask);

  PatchEmbedder& encoder() noexcept { return encoder_; }
  const VitConfig& config() const noexcept { return encoder_->config(); }

 private:
  PatchEmbedder encoder_{nullptr};
  torch::nn::Sequential decoder_{nullptr};
};
TORCH_MODULE(CoarseReconstructor);

struct RefinerConfig {
  int image_size = 96;
  int patch_size = 16;
  int base_width = 16;
  // false swaps the self-assembly layer for a plain 3x3 convolution.
  bool self_assembly = true;
};

// U-Net over [composite RGB, mask]. The encoder reaches the patch-grid
// resolution, where masked features are regenerated by self-assembly (or a
// 3x3 convolution in the ablation variant) before decoding with skips.
class RefinerImpl : public torch::nn::Module {
 public:
  explicit RefinerImpl(const RefinerConfig& config);

  // Raw network output [B,3,H,W] in (0,1), not yet composited. The output
  // layer starts at zero, so an untrained refiner returns the composite.
  torch::Tensor forward(const torch::Tensor& composite, const torch::Tensor& patch_mask,
                        const std::vector<OcclusionMask>& masks);

  const RefinerConfig& config() const noexcept { return config_; }

 private:
  RefinerConfig config_;
  torch::nn::Sequential enc1_{nullptr}, enc2_{nullptr}, enc3_{nullptr}, enc4_{nullptr};
  torch::nn::Sequential middle_{nullptr};
  torch::nn::Sequential plain_{nullptr};
  torch::nn::Sequential dec3_{nullptr}, dec2_{nullptr}, dec1_{nullptr}, dec0_{nullptr};
  torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(Refiner);

// Convolutional patch discriminator on images.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(int channels = 3, int width = 16);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

// 1x1-conv discriminator on frozen-encoder feature maps.
class FeatureDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit FeatureDiscriminatorImpl(int channels, int width = 32);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(FeatureDiscriminator);

// Generator-side adversarial terms (L_d on images, L_df on frozen features).
struct AdversarialTerms {
  torch::Tensor image;
  torch::Tensor feature;
};
AdversarialTerms discriminator_losses(PatchDiscriminator& image_disc, FeatureDiscriminator& feature_disc,
                                      FerNet& frozen, const torch::Tensor& z_rec);

// input outside the mask, network output inside. pixel_mask [B,1,H,W].
torch::Tensor compose(const torch::Tensor& input, const torch::Tensor& output, const torch::Tensor& pixel_mask);

// ---------------------------------------------------------------------------
// Single-image operations

struct CoarseResult {
  Image image;
  LatentSet latents;  // tagged kReconstructionPass
};

CoarseResult coarse_reconstruct(CoarseReconstructor& model, const PatchGrid& grid, const OcclusionMask& mask);

// Refines a coarse reconstruction. Unmasked pixels are copied from the
// input grid; the output is clamped to [0,1].
Image refine(Refiner& model, const Image& coarse, const PatchGrid& grid, const OcclusionMask& mask);

struct ReconstructionResult {
  Image coarse;
  Image refined;
  LatentSet latents;
};

struct ReconstructionModel {
  CoarseReconstructor coarse{nullptr};
  Refiner refiner{nullptr};

  ReconstructionResult run(const Image& input, const OcclusionMask& mask);
};

// ---------------------------------------------------------------------------
// Training

// Random patch-aligned training mask: either uniformly sampled patches or a
// union of rectangular patch blocks. Proportion lies in [min, max].
OcclusionMask random_training_mask(int rows, int cols, double min_proportion, double max_proportion,
                                   std::mt19937_64& rng);

struct ReconTrainConfig {
  VitConfig vit;
  RefinerConfig refiner;
  LossWeights weights;
  int coarse_epochs = 30;
  int refine_epochs = 20;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double refine_learning_rate = 1e-3;
  double disc_learning_rate = 2e-4;
  double mask_min = 0.1;
  double mask_max = 0.4;
  std::uint64_t seed = 11;
};

struct EpochLosses {
  int epoch = 0;
  double total = 0, re = 0, c = 0, sc = 0, d = 0, df = 0;
};

struct ReconTrainingLog {
  std::vector<EpochLosses> coarse;
  std::vector<EpochLosses> refine;
};

// Trains the coarse transformer on random masks with L_re.
CoarseReconstructor train_coarse(const torch::Tensor& images, const ReconTrainConfig& config,
                                 ReconTrainingLog* log = nullptr);

struct RefineTrainOptions {
  // When set, a checkpoint is written after every epoch as
  // <dir>/refine_epoch_<k>.ckpt and training resumes from the newest one.
  std::optional<std::filesystem::path> checkpoint_dir;
  // Stop after this many epochs in this call (for resume tests); -1 = all.
  int max_epochs_this_call = -1;
};

// Trains the refiner (coarse model frozen) with the full weighted loss.
Refiner train_refiner(const torch::Tensor& images, CoarseReconstructor& coarse, FerNet& frozen_fer,
                      const ReconTrainConfig& config, const RefineTrainOptions& options = {},
                      ReconTrainingLog* log = nullptr);

// Checkpoint I/O for the two reconstruction stages.
void save_coarse(const CoarseReconstructor& model, const std::filesystem::path& path);
CoarseReconstructor load_coarse(const std::filesystem::path& path);
void save_refiner(const Refiner& model, const std::filesystem::path& path);
Refiner load_refiner(const std::filesystem::path& path);

}  // namespace latent_ofer
