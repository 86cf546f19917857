#include "latent_ofer/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace latent_ofer {

Image::Image(int height, int width, int channels, float fill)
    : height_(height), width_(width), channels_(channels) {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw ShapeError("image dimensions must be positive");
  }
  pixels_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

void Image::validate() const {
  for (float v : pixels_) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
      throw DomainError("image value outside [0,1]");
    }
  }
}

OcclusionMask::OcclusionMask(int rows, int cols, bool value)
    : rows_(rows), cols_(cols), flags_(static_cast<std::size_t>(rows) * cols, value ? 1 : 0) {
  if (rows < 0 || cols < 0) throw ShapeError("mask dimensions must be nonnegative");
}

int OcclusionMask::count() const noexcept {
  return static_cast<int>(std::count(flags_.begin(), flags_.end(), std::uint8_t{1}));
}

double OcclusionMask::proportion() const noexcept {
  return flags_.empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(flags_.size());
}

std::vector<int> OcclusionMask::occluded_indices() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i) {
    if (flags_[i]) out.push_back(i);
  }
  return out;
}

AttentionMap AttentionMap::normalized(int rows, int cols, std::vector<double> scores) {
  if (static_cast<int>(scores.size()) != rows * cols) {
    throw ShapeError("attention scores do not match grid");
  }
  double total = 0.0;
  for (double s : scores) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw DomainError("attention scores must be finite and >= 0");
    total += s;
  }
  if (total <= 0.0) return uniform(rows, cols);
  for (double& s : scores) s /= total;
  return AttentionMap{rows, cols, std::move(scores)};
}

AttentionMap AttentionMap::uniform(int rows, int cols) {
  const int n = rows * cols;
  return AttentionMap{rows, cols, std::vector<double>(n, 1.0 / n)};
}

void AttentionMap::validate(double tol) const {
  if (static_cast<int>(weights.size()) != size()) throw ShapeError("attention map size mismatch");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw DomainError("negative attention weight");
    total += w;
  }
  if (std::abs(total - 1.0) > tol) throw DomainError("attention weights do not sum to 1");
}

PatchGrid partition(const Image& image, int patch_size) {
  if (patch_size <= 0 || image.empty() || image.height() % patch_size != 0 ||
      image.width() % patch_size != 0) {
    std::ostringstream msg;
    msg << "image " << image.height() << "x" << image.width() << " is not divisible by patch size "
        << patch_size;
    throw ShapeError(msg.str());
  }
  PatchGrid grid;
  grid.patch_size = patch_size;
  grid.grid_rows = image.height() / patch_size;
  grid.grid_cols = image.width() / patch_size;
  grid.patches.reserve(grid.size());
  const int c = image.channels();
  for (int gr = 0; gr < grid.grid_rows; ++gr) {
    for (int gc = 0; gc < grid.grid_cols; ++gc) {
      Image patch(patch_size, patch_size, c);
      for (int y = 0; y < patch_size; ++y) {
        const float* src = &image.pixels()[(static_cast<std::size_t>(gr * patch_size + y) * image.width() +
                                            gc * patch_size) * c];
        std::copy(src, src + patch_size * c, &patch.at(y, 0, 0));
      }
      grid.patches.push_back(std::move(patch));
    }
  }
  return grid;
}

Image reassemble(const PatchGrid& grid) {
  if (grid.grid_rows <= 0 || grid.grid_cols <= 0 ||
      static_cast<int>(grid.patches.size()) != grid.size()) {
    throw ShapeError("malformed patch grid");
  }
  const int p = grid.patch_size;
  const int c = grid.channels();
  Image image(grid.grid_rows * p, grid.grid_cols * p, c);
  for (int i = 0; i < grid.size(); ++i) {
    const Image& patch = grid.patches[i];
    if (patch.height() != p || patch.width() != p || patch.channels() != c) {
      throw ShapeError("patch shape mismatch");
    }
    const int gr = i / grid.grid_cols;
    const int gc = i % grid.grid_cols;
    for (int y = 0; y < p; ++y) {
      std::copy_n(&patch.at(y, 0, 0), p * c, &image.at(gr * p + y, gc * p, 0));
    }
  }
  return image;
}

void fill_patch(Image& image, int patch_size, int grid_cols, int index, float value) {
  const int gr = index / grid_cols;
  const int gc = index % grid_cols;
  for (int y = gr * patch_size; y < (gr + 1) * patch_size; ++y) {
    std::fill_n(&image.at(y, gc * patch_size, 0), patch_size * image.channels(), value);
  }
}

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw DataError(DataError::Code::kUnreadableImage,
                    "cannot read PNG " + path.string() + ": " + png.message);
  }
  const bool alpha = (png.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  int channels = 3;
  if (color) {
    png.format = alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
    channels = alpha ? 4 : 3;
  } else {
    png.format = alpha ? PNG_FORMAT_GA : PNG_FORMAT_GRAY;
    channels = alpha ? 2 : 1;
  }
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    throw DataError(DataError::Code::kUnreadableImage,
                    "cannot decode PNG " + path.string() + ": " + png.message);
  }
  Image image(static_cast<int>(png.height), static_cast<int>(png.width), channels);
  auto out = image.pixels();
  for (std::size_t i = 0; i < buffer.size(); ++i) out[i] = static_cast<float>(buffer[i]) / 255.0f;
  png_image_free(&png);
  return image;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width());
  png.height = static_cast<png_uint_32>(image.height());
  switch (image.channels()) {
    case 1: png.format = PNG_FORMAT_GRAY; break;
    case 2: png.format = PNG_FORMAT_GA; break;
    case 3: png.format = PNG_FORMAT_RGB; break;
    case 4: png.format = PNG_FORMAT_RGBA; break;
    default: throw ShapeError("PNG supports 1-4 channels");
  }
  std::vector<png_byte> buffer(image.pixels().size());
  auto in = image.pixels();
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    buffer[i] = static_cast<png_byte>(std::lround(std::clamp(in[i], 0.0f, 1.0f) * 255.0f));
  }
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw DataError(DataError::Code::kUnwritable, "cannot write PNG " + path.string() + ": " + png.message);
  }
}

std::string mask_to_json(const OcclusionMask& mask) {
  nlohmann::json j;
  j["rows"] = mask.rows();
  j["cols"] = mask.cols();
  std::vector<int> flags(mask.flags().begin(), mask.flags().end());
  j["flags"] = flags;
  return j.dump();
}

OcclusionMask mask_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(DataError::Code::kBadFormat, std::string("mask JSON: ") + e.what());
  }
  const int rows = j.at("rows").get<int>();
  const int cols = j.at("cols").get<int>();
  const auto flags = j.at("flags").get<std::vector<int>>();
  if (static_cast<int>(flags.size()) != rows * cols) {
    throw ShapeError("mask JSON flag count does not match rows*cols");
  }
  OcclusionMask mask(rows, cols);
  for (int i = 0; i < rows * cols; ++i) {
    if (flags[i] != 0 && flags[i] != 1) throw DataError(DataError::Code::kBadFormat, "mask flags must be 0/1");
    mask.set(i, flags[i] == 1);
  }
  return mask;
}

}  // namespace latent_ofer
