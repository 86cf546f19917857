#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <span>
#include <vector>

#include "latent_ofer/encoder.hpp"
#include "latent_ofer/image.hpp"

namespace latent_ofer {

struct SvddConfig {
  int hidden = 64;
  int out_dim = 32;
  double weight_decay = 1e-4;  // lambda of the Frobenius regularizer, > 0
  double quantile = 0.99;
  int epochs = 60;
  int batch_size = 256;
  double learning_rate = 1e-3;
  std::uint64_t seed = 7;
};

// Bias-free two-layer projection Phi(x; W). No bias parameters anywhere,
// otherwise the objective is trivially minimized by a constant map.
class SvddNetImpl : public torch::nn::Module {
 public:
  SvddNetImpl(int in_dim, int hidden, int out_dim);
  torch::Tensor forward(const torch::Tensor& x) const;

  // The weight matrices w^1..w^L in layer order.
  std::vector<torch::Tensor> weights() const;
  int in_dim() const noexcept { return in_dim_; }

 private:
  int in_dim_;
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(SvddNet);

struct SvddModel {
  SvddNet net{nullptr};
  torch::Tensor center;  // [out_dim]
  double radius = 0.0;
  double weight_decay = 1e-4;
  double quantile = 0.99;
  int64_t n_train = 0;
  // Encoder depth whose latents feed the detector (-1 = full encoder).
  int latent_depth = -1;
  // Optional per-patch-position standardization [T,D] applied by
  // classify_patches before the projection; undefined means identity.
  torch::Tensor input_mean, input_std;

  int latent_dim() const { return net->in_dim(); }
};

struct PatchScore {
  int index = 0;
  double distance = 0.0;
  bool occluded = false;
};

struct SvddTrainingLog {
  std::vector<double> epoch_loss;  // mean objective per epoch
};

constexpr double kCenterClamp = 0.1;

// Mean of the mapped vectors; coordinates with |c_j| < 0.1 are pushed to
// +0.1 (c_j >= 0) or -0.1 (c_j < 0).
torch::Tensor init_center(const torch::Tensor& mapped);

// (1/n) sum ||Phi(x_i) - c||^2 + (lambda/2) sum_l ||w^l||_F^2, differentiable in W.
torch::Tensor svdd_loss(const torch::Tensor& latents, const SvddModel& model);

// Distances ||Phi(x) - c|| for each row of `latents`, no grad.
torch::Tensor svdd_distances(const torch::Tensor& latents, const SvddModel& model);

// Trains on latents of unoccluded patches [n,D]. Sets the center from an
// initial forward pass, optimizes the objective with Adam, then fixes the
// radius at the configured training-distance quantile.
SvddModel train_svdd(const torch::Tensor& unoccluded_latents, const SvddConfig& config,
                     SvddTrainingLog* log = nullptr);

// Linear-interpolation quantile: position h = (n-1) q on the sorted list.
double determine_radius(std::span<const double> train_distances, double quantile);

struct PatchClassification {
  OcclusionMask mask;
  std::vector<PatchScore> scores;
};

// Per-position mean and std (plus 1e-3) of [N,T,D] latents.
struct PatchStandardizer {
  torch::Tensor mean, std;  // [T,D]
};
PatchStandardizer fit_standardizer(const torch::Tensor& latents);
// (latents - mean) / std for [N,T,D] or [T,D] latents.
torch::Tensor standardize(const torch::Tensor& latents, const torch::Tensor& mean, const torch::Tensor& std);

// occluded <=> distance > radius (strict).
PatchClassification classify_patches(const LatentSet& latents, const SvddModel& model);

struct DetectionMetrics {
  double accuracy = 1.0;
  double precision = 1.0;
  double recall = 1.0;
  // Set when precision or recall had a zero denominator and was reported as 1.
  bool degenerate = false;
  int64_t true_positive = 0, false_positive = 0, true_negative = 0, false_negative = 0;
};

// Occluded is the positive class.
DetectionMetrics detection_metrics(const OcclusionMask& predicted, const OcclusionMask& truth);
// Pooled over many images.
DetectionMetrics detection_metrics(std::span<const OcclusionMask> predicted, std::span<const OcclusionMask> truth);

// Checkpoint (weights + center) and JSON sidecar {center, radius, quantile, lambda}.
void save_svdd(const SvddModel& model, const std::filesystem::path& checkpoint_path,
               const std::filesystem::path& sidecar_path);
SvddModel load_svdd(const std::filesystem::path& checkpoint_path, const std::filesystem::path& sidecar_path);

}  // namespace latent_ofer
