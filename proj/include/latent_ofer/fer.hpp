#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "latent_ofer/encoder.hpp"
#include "latent_ofer/image.hpp"

namespace latent_ofer {

inline constexpr int kNumExpressions = 7;
inline constexpr std::array<std::string_view, kNumExpressions> kExpressionNames{
    "neutral", "happy", "sad", "surprise", "fear", "disgust", "anger"};

// Which feature sources feed the classifier.
enum class FusionMode {
  kFullLatents,       // mean of every latent
  kExtractedLatents,  // mean of the attention-selected latents
  kCnnOnly,
  kCnnFull,
  kCnnExtracted,
};

std::string_view to_string(FusionMode mode);
FusionMode parse_fusion_mode(std::string_view name);
inline bool uses_cnn(FusionMode m) {
  return m == FusionMode::kCnnOnly || m == FusionMode::kCnnFull || m == FusionMode::kCnnExtracted;
}
inline bool uses_latents(FusionMode m) { return m != FusionMode::kCnnOnly; }
inline bool extracts_latents(FusionMode m) {
  return m == FusionMode::kExtractedLatents || m == FusionMode::kCnnExtracted;
}

struct ExpressionDistribution {
  std::array<double, kNumExpressions> probabilities{};
  int label() const;
};

ExpressionDistribution distribution_from_logits(const torch::Tensor& logits);

inline constexpr double kSelectFraction = 0.5;

// Keys are ranked by attention; the top ceil(fraction * N) are kept, ties
// at the cutoff going to the lower index.
struct LatentSelection {
  std::vector<int> keys;  // ascending
  torch::Tensor values;   // [K,D], rows in key order
  std::string rule = "top-50%-rank";
};

LatentSelection select_latents(const LatentSet& latents, const AttentionMap& attention,
                               double fraction = kSelectFraction);
int selection_count(int num_patches, double fraction = kSelectFraction);

// Batched form of the same rule: bool [B,N].
torch::Tensor selection_mask(const torch::Tensor& attention, double fraction = kSelectFraction);

struct FerConfig {
  CnnConfig cnn;
  int latent_dim = 64;
  FusionMode mode = FusionMode::kCnnExtracted;
  double select_fraction = kSelectFraction;
};

struct FerOutput {
  torch::Tensor logits;     // [B,7]
  torch::Tensor features;   // [B,C,r,c] refined CNN features
  torch::Tensor attention;  // [B,r*c] normalized spatial attention
};

// CNN branch with channel/spatial attention, optional latent branch, and a
// linear classifier over the concatenation of the pooled CNN features and
// the mean-pooled (optionally attention-selected) latents.
class FerNetImpl : public torch::nn::Module {
 public:
  explicit FerNetImpl(const FerConfig& config);

  // latents [B,N,D] required when the mode uses latents. `key_attention`
  // [B,N] overrides the network's own attention as the selection key
  // source; latents-only modes must supply it since their CNN receives no
  // gradient.
  FerOutput forward(const torch::Tensor& images, const torch::Tensor& latents = {},
                    const torch::Tensor& key_attention = {});

  // Classifier over already pooled inputs; either may be undefined when
  // the mode does not use it.
  torch::Tensor head(const torch::Tensor& pooled_cnn, const torch::Tensor& pooled_latents);

  // Mean of the selected rows per sample; zero vector for an empty selection.
  static torch::Tensor pool_latents(const torch::Tensor& latents, const torch::Tensor& selected);

  const FerConfig& config() const noexcept { return config_; }
  AttentionCnn& cnn() noexcept { return cnn_; }

 private:
  FerConfig config_;
  AttentionCnn cnn_{nullptr};
  torch::nn::Linear classifier_{nullptr};
};
TORCH_MODULE(FerNet);

// Eval-mode classification of one image's features and selected latents.
ExpressionDistribution fuse_and_classify(FerNet& net, const FeatureMap& features, const LatentSelection& selection);

struct CamForward {
  torch::Tensor features;  // [1,C,r,c], part of the graph producing logits
  torch::Tensor logits;    // [1,K]
};

// Grad-CAM at the feature-map resolution: channel weights are the spatial
// mean of d logit / d features, the map is ReLU(sum_k w_k A_k), normalized
// to sum 1. A map that is zero everywhere falls back to uniform.
template <typename Model>
AttentionMap grad_cam(Model&& model, const Image& image, int target_class) {
  torch::Tensor input = torch::from_blob(const_cast<float*>(image.pixels().data()),
                                         {image.height(), image.width(), image.channels()}, torch::kFloat32)
                            .permute({2, 0, 1})
                            .unsqueeze(0)
                            .clone()
                            .requires_grad_(true);
  torch::AutoGradMode enable(true);
  CamForward out = model(input);
  if (target_class < 0 || target_class >= out.logits.size(1)) {
    throw DomainError("grad_cam: class index out of range");
  }
  const int rows = static_cast<int>(out.features.size(2));
  const int cols = static_cast<int>(out.features.size(3));
  auto grads = torch::autograd::grad({out.logits[0][target_class]}, {out.features}, {}, false, false, true)[0];
  if (!grads.defined()) return AttentionMap::uniform(rows, cols);
  auto weights = grads.mean({2, 3}, true);
  auto cam = torch::relu((weights * out.features).sum(1)).flatten().detach().to(torch::kFloat64).contiguous();
  std::vector<double> scores(cam.data_ptr<double>(), cam.data_ptr<double>() + cam.numel());
  return AttentionMap::normalized(rows, cols, std::move(scores));
}

// Grad-CAM adapter for a trained FerNet (eval mode, fixed latents).
AttentionMap fer_grad_cam(FerNet& net, const Image& image, int target_class, const torch::Tensor& latents = {},
                          const torch::Tensor& key_attention = {});

struct FerTrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  std::uint64_t seed = 5;
};

struct FerTrainingLog {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;
};

// Cross-entropy training. `latents` [N,T,D] is required when the mode uses
// latents; `key_attention` [N,T] when it extracts without a CNN branch.
FerNet train_fer(const torch::Tensor& images, const torch::Tensor& labels, const torch::Tensor& latents,
                 const torch::Tensor& key_attention, const FerConfig& config, const FerTrainConfig& train,
                 FerTrainingLog* log = nullptr);

void save_fer(FerNet& net, const std::filesystem::path& path);
FerNet load_fer(const std::filesystem::path& path);

}  // namespace latent_ofer
