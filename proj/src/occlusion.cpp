#include "latent_ofer/occlusion.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "latent_ofer/ranking.hpp"

namespace latent_ofer {

namespace {

void check_proportion(double proportion) {
  if (!(proportion >= 0.0 && proportion <= 1.0)) {
    throw DomainError("occlusion proportion must lie in [0,1]");
  }
}

OccludedImage fill_indices(const Image& image, int patch_size, const std::vector<int>& indices) {
  if (image.height() % patch_size != 0 || image.width() % patch_size != 0) {
    throw ShapeError("image is not patch-aligned");
  }
  const int rows = image.height() / patch_size;
  const int cols = image.width() / patch_size;
  OccludedImage out{image, OcclusionMask(rows, cols)};
  for (int idx : indices) {
    fill_patch(out.image, patch_size, cols, idx, kOcclusionFill);
    out.mask.set(idx, true);
  }
  return out;
}

}  // namespace

OccludedImage random_sampling_occlusion(const Image& image, double proportion, std::uint64_t seed,
                                        int patch_size) {
  check_proportion(proportion);
  if (patch_size <= 0) throw ShapeError("patch size must be positive");
  const int n = (image.height() / patch_size) * (image.width() / patch_size);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(proportion_count(proportion, n));
  return fill_indices(image, patch_size, order);
}

OccludedImage grad_occlusion(const Image& image, double proportion, const AttentionMap& attention) {
  check_proportion(proportion);
  if (attention.rows <= 0 || attention.cols <= 0 || image.height() % attention.rows != 0 ||
      image.width() % attention.cols != 0 ||
      image.height() / attention.rows != image.width() / attention.cols ||
      static_cast<int>(attention.weights.size()) != attention.size()) {
    throw ShapeError("attention map does not match the image patch grid");
  }
  const int patch_size = image.height() / attention.rows;
  const auto top = top_k_indices(std::span<const double>(attention.weights),
                                 proportion_count(proportion, attention.size()));
  return fill_indices(image, patch_size, top);
}

OccludedImage synth_occlude(const Image& image, const Image& occluder, int row, int col, int patch_size,
                            double threshold) {
  if (occluder.channels() != image.channels() + 1) {
    throw ShapeError("occluder must carry the image channels plus alpha");
  }
  if (row < 0 || col < 0 || row + occluder.height() > image.height() ||
      col + occluder.width() > image.width()) {
    throw DomainError("occluder placement is out of bounds");
  }
  if (patch_size <= 0 || image.height() % patch_size != 0 || image.width() % patch_size != 0) {
    throw ShapeError("image is not patch-aligned");
  }
  const int rows = image.height() / patch_size;
  const int cols = image.width() / patch_size;
  const int c = image.channels();
  OccludedImage out{image, OcclusionMask(rows, cols)};
  std::vector<int> covered(static_cast<std::size_t>(rows) * cols, 0);
  for (int y = 0; y < occluder.height(); ++y) {
    for (int x = 0; x < occluder.width(); ++x) {
      const float alpha = occluder.at(y, x, c);
      if (alpha <= 0.0f) continue;
      const int iy = row + y;
      const int ix = col + x;
      for (int k = 0; k < c; ++k) {
        float& v = out.image.at(iy, ix, k);
        v = alpha * occluder.at(y, x, k) + (1.0f - alpha) * v;
      }
      ++covered[(iy / patch_size) * cols + ix / patch_size];
    }
  }
  const double area = static_cast<double>(patch_size) * patch_size;
  for (int i = 0; i < rows * cols; ++i) {
    if (covered[i] / area > threshold) out.mask.set(i, true);
  }
  return out;
}

}  // namespace latent_ofer
