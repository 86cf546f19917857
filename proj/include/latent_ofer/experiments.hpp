#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latent_ofer/config.hpp"
#include "latent_ofer/dataset.hpp"
#include "latent_ofer/fer.hpp"
#include "latent_ofer/occlusion.hpp"
#include "latent_ofer/quality.hpp"
#include "latent_ofer/reconstruct.hpp"
#include "latent_ofer/svdd.hpp"

namespace latent_ofer {

inline constexpr std::array<FusionMode, 5> kAblationModes{FusionMode::kFullLatents, FusionMode::kExtractedLatents,
                                                          FusionMode::kCnnOnly, FusionMode::kCnnFull,
                                                          FusionMode::kCnnExtracted};

// File layout of a models directory.
struct ModelPaths {
  std::filesystem::path dir;

  std::filesystem::path semantic_fer() const { return dir / "semantic_fer.ckpt"; }
  std::filesystem::path coarse() const { return dir / "coarse.ckpt"; }
  std::filesystem::path refiner(bool self_assembly = true) const {
    return dir / (self_assembly ? "refiner.ckpt" : "refiner_plain.ckpt");
  }
  std::filesystem::path svdd() const { return dir / "svdd.ckpt"; }
  std::filesystem::path svdd_sidecar() const { return dir / "svdd.json"; }
  std::filesystem::path fer(FusionMode mode, int seed_index) const;
  std::filesystem::path refine_checkpoints() const { return dir / "refine_epochs"; }
};

struct PipelineModels {
  FerNet semantic{nullptr};
  CoarseReconstructor coarse{nullptr};
  Refiner refiner{nullptr};
  Refiner refiner_plain{nullptr};
  std::optional<SvddModel> svdd;
  std::map<FusionMode, std::vector<FerNet>> fer;  // one network per noise seed

  ReconstructionModel reconstruction(bool self_assembly = true) const;
  FerNet& fer_net(FusionMode mode, int seed_index = 0);

  // Throw ModelError naming the stage when it is not loaded.
  void require_semantic() const;
  void require_coarse() const;
  void require_refiner(bool self_assembly = true) const;
  void require_detector() const;
  void require_fer(FusionMode mode, int seeds = 1) const;
};

// Loads every checkpoint present in the directory; missing ones stay empty.
PipelineModels load_models(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Training drivers (each saves into ModelPaths and returns the model)

FerNet train_semantic_stage(const Dataset& train, const ExperimentConfig& config, const ModelPaths& paths);

struct ReconStageResult {
  ReconTrainingLog self_assembly_log;
  ReconTrainingLog plain_log;
};
// Coarse transformer, then the self-assembly refiner and the plain-conv
// refiner with identical data, masks and epochs.
ReconStageResult train_recon_stage(const Dataset& train, const ExperimentConfig& config, PipelineModels& models,
                                   const ModelPaths& paths);

SvddModel train_svdd_stage(const Dataset& train, const ExperimentConfig& config, PipelineModels& models,
                           const ModelPaths& paths, SvddTrainingLog* log = nullptr);

// Trains `config.noise_seeds` networks for every fusion mode.
void train_fer_stage(const Dataset& train, const ExperimentConfig& config, PipelineModels& models,
                     const ModelPaths& paths);

// Encoder latents [N,T,D] for a batch of images; `patch_mask` [N,T] may be
// undefined. Runs in eval mode without grad.
torch::Tensor encode_latents(CoarseReconstructor& coarse, const torch::Tensor& images,
                             const torch::Tensor& patch_mask = {}, int depth = -1);

// ---------------------------------------------------------------------------
// Inference

LatentSet detector_latents(PipelineModels& models, const Image& image);
PatchClassification detect_occlusion(PipelineModels& models, const Image& image);

struct PredictionDiagnostics {
  OcclusionMask mask;
  std::vector<PatchScore> scores;
  double psnr_vs_input = 0.0;
  std::vector<int> selected_keys;
  Image reconstructed;
};

struct Prediction {
  int label = 0;
  ExpressionDistribution distribution;
  PredictionDiagnostics diagnostics;
};

// detect -> mask -> reconstruct -> select -> classify. A fully masked
// detection raises DomainError (nothing left to condition on).
Prediction predict_pipeline(const Image& image, PipelineModels& models, FusionMode mode = FusionMode::kCnnExtracted);

nlohmann::json prediction_json(const Prediction& prediction);

// ---------------------------------------------------------------------------
// Evaluation

// Deterministic sprite occlusion of image i of an evaluation set.
OccludedImage evaluation_occlusion(const Image& image, std::uint64_t seed, std::size_t index);

struct DetectionEval {
  DetectionMetrics metrics;
  double mean_true_proportion = 0.0;
};
DetectionEval evaluate_detection(PipelineModels& models, const Dataset& data, const ExperimentConfig& config);

struct ReconstructionEval {
  ImageQuality quality;       // mean PSNR (finite images only) and SSIM
  double masked_psnr = 0.0;   // mean over masked pixels
  double loss_re = 0.0, loss_c = 0.0, loss_sc = 0.0;
  double mask_proportion = 0.0;
  int images = 0;
};
// Reconstructs each image under its evaluation-occlusion mask (truth mask,
// so both refiner variants see identical masks).
ReconstructionEval evaluate_reconstruction(PipelineModels& models, const Dataset& data, const ExperimentConfig& config,
                                           bool self_assembly = true);
nlohmann::json reconstruction_json(const ReconstructionEval& eval);

struct AccuracyCurve {
  std::string protocol;
  std::vector<double> proportions;
  std::vector<double> accuracy;
  std::vector<std::vector<int>> predictions;  // [proportion][image]
};

struct SweepResult {
  AccuracyCurve random, grad;
  std::vector<int> labels;
};
// Accuracy of the CNN+extracted-latents classifier (no reconstruction)
// under random-sampling and grad occlusion at each configured proportion.
SweepResult run_occlusion_sweep(PipelineModels& models, const Dataset& data, const ExperimentConfig& config);

struct AblationRow {
  bool reconstruction = false;
  FusionMode mode = FusionMode::kCnnOnly;
  std::vector<double> seed_accuracy;
  std::vector<std::vector<int>> predictions;  // [seed][image]
  double mean() const;
  double stddev() const;  // sample standard deviation over seeds
  std::string tag() const;
};

struct AblationResult {
  std::vector<AblationRow> rows;  // reconstruction off then on, modes in kAblationModes order
  std::vector<int> labels;
  const AblationRow& row(bool reconstruction, FusionMode mode) const;
};
AblationResult run_ablation(PipelineModels& models, const Dataset& data, const ExperimentConfig& config);

// Accuracy recomputed as the trace of the confusion matrix.
double confusion_accuracy(const std::vector<int>& labels, const std::vector<int>& predictions);

struct EvaluationReport {
  std::optional<DetectionEval> detection;
  std::optional<ReconstructionEval> reconstruction;
  std::optional<ReconstructionEval> reconstruction_plain;
  std::optional<SweepResult> sweep;
  std::optional<AblationResult> ablation;
};

nlohmann::json report_json(const EvaluationReport& report);

// Two-curve accuracy plot (proportion vs accuracy).
void write_sweep_plot(const SweepResult& sweep, const std::filesystem::path& path);

}  // namespace latent_ofer
