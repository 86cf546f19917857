#pragma once

#include <cstdint>

#include "latent_ofer/image.hpp"

namespace latent_ofer {

struct OccludedImage {
  Image image;
  OcclusionMask mask;
};

constexpr int kDefaultPatchSize = 16;
constexpr double kCoverageThreshold = 0.25;

// Fills round(proportion * N) uniformly chosen patches with mid-gray.
OccludedImage random_sampling_occlusion(const Image& image, double proportion, std::uint64_t seed,
                                        int patch_size = kDefaultPatchSize);

// Fills the round(proportion * N) patches with the highest attention.
// The patch size is image height / attention rows.
OccludedImage grad_occlusion(const Image& image, double proportion, const AttentionMap& attention);

// Alpha-composites an RGBA occluder with its top-left corner at
// (row, col). A patch is flagged when more than `threshold` of its
// pixels have nonzero occluder alpha.
OccludedImage synth_occlude(const Image& image, const Image& occluder, int row, int col,
                            int patch_size = kDefaultPatchSize, double threshold = kCoverageThreshold);

}  // namespace latent_ofer
