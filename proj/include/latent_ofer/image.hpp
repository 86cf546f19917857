#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "latent_ofer/errors.hpp"

namespace latent_ofer {

// Interleaved H x W x C image with values in [0,1].
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, float fill = 0.0f);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  bool empty() const noexcept { return pixels_.empty(); }

  float& at(int y, int x, int c) { return pixels_[index(y, x, c)]; }
  const float& at(int y, int x, int c) const { return pixels_[index(y, x, c)]; }

  std::span<float> pixels() noexcept { return pixels_; }
  std::span<const float> pixels() const noexcept { return pixels_; }

  // Throws DomainError when any value is outside [0,1] or not finite.
  void validate() const;

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> pixels_;
};

// Square patches of an image in row-major raster order.
struct PatchGrid {
  std::vector<Image> patches;
  int grid_rows = 0;
  int grid_cols = 0;
  int patch_size = 0;

  int size() const noexcept { return grid_rows * grid_cols; }
  int channels() const { return patches.empty() ? 0 : patches.front().channels(); }
};

// One flag per patch, true = occluded.
class OcclusionMask {
 public:
  OcclusionMask() = default;
  OcclusionMask(int rows, int cols, bool value = false);

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  int size() const noexcept { return rows_ * cols_; }

  bool operator[](int index) const { return flags_.at(index) != 0; }
  void set(int index, bool value) { flags_.at(index) = value ? 1 : 0; }

  int count() const noexcept;
  double proportion() const noexcept;
  bool all() const noexcept { return count() == size(); }
  bool none() const noexcept { return count() == 0; }
  std::vector<int> occluded_indices() const;

  const std::vector<std::uint8_t>& flags() const noexcept { return flags_; }

  friend bool operator==(const OcclusionMask&, const OcclusionMask&) = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<std::uint8_t> flags_;
};

// Per-patch nonnegative weights summing to one.
struct AttentionMap {
  int rows = 0;
  int cols = 0;
  std::vector<double> weights;

  int size() const noexcept { return rows * cols; }

  // Builds a map from raw nonnegative scores. All-zero scores give the
  // uniform map.
  static AttentionMap normalized(int rows, int cols, std::vector<double> scores);
  static AttentionMap uniform(int rows, int cols);

  // Throws DomainError if negative or not summing to 1 within tol.
  void validate(double tol = 1e-6) const;
};

constexpr float kOcclusionFill = 0.5f;

PatchGrid partition(const Image& image, int patch_size);
Image reassemble(const PatchGrid& grid);

// Sets every pixel of patch `index` (raster order, `grid_cols` columns) to `value`.
void fill_patch(Image& image, int patch_size, int grid_cols, int index, float value);

// 8-bit PNG, gray/RGB/RGBA. Values scaled to [0,1] on load.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

// {"rows": r, "cols": c, "flags": [0/1 row-major]}
std::string mask_to_json(const OcclusionMask& mask);
OcclusionMask mask_from_json(const std::string& text);

}  // namespace latent_ofer
