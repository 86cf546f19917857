#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "latent_ofer/fer.hpp"
#include "latent_ofer/reconstruct.hpp"
#include "latent_ofer/svdd.hpp"

namespace latent_ofer {

enum class OcclusionProtocol { kSprite, kRandom, kGrad };
std::string_view to_string(OcclusionProtocol p);
OcclusionProtocol parse_protocol(std::string_view name);

struct ExperimentConfig {
  ExperimentConfig() { sync(); }

  std::uint64_t seed = 1;

  // Manifests; empty means "not configured".
  std::filesystem::path train_manifest, val_manifest, test_manifest;
  std::filesystem::path models_dir = "models";

  VitConfig vit;
  CnnConfig cnn;
  int refiner_width = 16;

  LossWeights weights;
  SvddConfig svdd;
  int svdd_latent_depth = 0;
  ReconTrainConfig recon;
  FerTrainConfig fer;
  double select_fraction = kSelectFraction;
  FusionMode predict_mode = FusionMode::kCnnExtracted;

  OcclusionProtocol protocol = OcclusionProtocol::kSprite;
  double proportion = 0.25;
  std::vector<double> sweep_proportions{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  int noise_seeds = 3;

  // Throws DomainError/DataError when a field is out of range or a
  // configured path does not exist.
  void validate() const;
  // Pushes the shared fields (seed, model sizes, weights) into the
  // per-stage configs. Call after editing them.
  void sync();
};

inline constexpr const char* kSeedEnvVar = "LATENT_OFER_SEED";

// Flat `key = value` text grouped under [section] headers; `#` and `;`
// start comments, surrounding quotes on values are stripped. Unknown keys
// are rejected. The seed environment variable overrides [experiment] seed.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

// Canonical text form (round-trips through parse_config).
std::string dump_config(const ExperimentConfig& config);

}  // namespace latent_ofer
