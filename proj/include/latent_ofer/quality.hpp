#pragma once

#include <limits>

#include "latent_ofer/image.hpp"

namespace latent_ofer {

// SSIM constants for data range 1: C1 = (0.01)^2, C2 = (0.03)^2, 11-tap
// Gaussian window with sigma 1.5, evaluated where the window fits
// entirely inside the image, averaged over positions and channels.
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

// Identical images report +infinity.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

struct ImageQuality {
  double psnr = 0.0;
  double ssim = 0.0;
};

double psnr(const Image& reference, const Image& test);
double ssim(const Image& reference, const Image& test);
ImageQuality image_quality(const Image& reference, const Image& test);

// PSNR over the pixels of occluded patches only; +inf when the mask is empty
// or the region matches exactly.
double masked_psnr(const Image& reference, const Image& test, const OcclusionMask& mask);

}  // namespace latent_ofer
