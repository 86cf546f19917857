#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>

#include "latent_ofer/image.hpp"
#include "latent_ofer/occlusion.hpp"

namespace latent_ofer {

inline constexpr int kToyImageSize = 96;
inline constexpr double kFaceCenterX = kToyImageSize / 2.0;
// Mouth curve: y(x) = y0 - curvature * kMouthLift * ((x - cx) / kMouthHalfWidth)^2.
inline constexpr double kMouthHalfWidth = 12.0;
inline constexpr double kMouthLift = 9.0;

// Expression cues for one class. Every face is mirror-symmetric about
// the vertical center line.
struct ExpressionCues {
  double mouth_curvature;  // > 0 corners up
  double mouth_open;       // 0 closed .. 1 wide open
  double brow_angle;       // > 0 inner ends raised
  double brow_raise;
  double eye_open;
};

const ExpressionCues& class_cues(int label);

struct FaceParams {
  int label = 0;
  ExpressionCues cues{};
  double center_y = 50.0;
  double head_rx = 32.0, head_ry = 40.0;
  std::array<double, 3> skin{}, background{}, background_bottom{}, brow_color{};
  double noise_sigma = 0.015;
  std::uint64_t noise_seed = 0;
};

FaceParams sample_face(int label, std::mt19937_64& rng);
Image render_face(const FaceParams& params);

// Writes n faces (label = i mod 7) and labels.csv to out_dir; returns the
// manifest path. Identical output for identical (n, seed).
std::filesystem::path generate_toy_dataset(int n, std::uint64_t seed, const std::filesystem::path& out_dir);

enum class OccluderFamily { kDisc, kBar, kChecker, kStripes, kTriangle, kRing };
inline constexpr std::array<OccluderFamily, 6> kAllOccluders{OccluderFamily::kDisc,   OccluderFamily::kBar,
                                                            OccluderFamily::kChecker, OccluderFamily::kStripes,
                                                            OccluderFamily::kTriangle, OccluderFamily::kRing};

// RGBA sprite of side `size` with saturated, textured colors; alpha is 0 or 1.
Image make_occluder(OccluderFamily family, int size, std::mt19937_64& rng);

struct SpriteOptions {
  int min_size = 30;
  int max_size = 46;
  std::span<const OccluderFamily> families = kAllOccluders;
};

// Pastes one random sprite at a random fully-inside position.
OccludedImage random_sprite_occlusion(const Image& image, std::mt19937_64& rng, const SpriteOptions& options = {});

}  // namespace latent_ofer
