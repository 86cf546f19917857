#include "latent_ofer/toy_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "latent_ofer/errors.hpp"

namespace latent_ofer {

namespace {

constexpr std::array<ExpressionCues, 7> kCues{{
    {0.0, 0.0, 0.0, 0.0, 1.0},             // neutral
    {1.0, 0.3, 0.0, 0.2, 0.7},             // happy
    {-1.0, 0.0, 0.8, 0.0, 0.8},            // sad
    {1.0 / 3.0, 1.0, 0.0, 1.0, 1.4},       // surprise
    {-2.0 / 3.0, 0.5, 0.6, 0.8, 1.3},      // fear
    {-1.0 / 3.0, 0.1, -0.5, -0.4, 0.6},    // disgust
    {2.0 / 3.0, 0.0, -1.0, -0.6, 0.9},     // anger
}};

constexpr std::array<double, 3> kLipColor{0.78, 0.12, 0.18};
constexpr std::array<double, 3> kMouthInside{0.18, 0.04, 0.05};
constexpr std::array<double, 3> kSclera{0.95, 0.95, 0.93};
constexpr std::array<double, 3> kIris{0.12, 0.10, 0.10};

double coverage(double signed_distance) { return std::clamp(0.5 - signed_distance, 0.0, 1.0); }

double ellipse_sd(double x, double y, double cx, double cy, double rx, double ry) {
  const double r = std::hypot((x - cx) / rx, (y - cy) / ry);
  return (r - 1.0) * std::min(rx, ry);
}

double segment_distance(double x, double y, double x0, double y0, double x1, double y1) {
  const double dx = x1 - x0, dy = y1 - y0;
  const double t = std::clamp(((x - x0) * dx + (y - y0) * dy) / (dx * dx + dy * dy), 0.0, 1.0);
  return std::hypot(x - (x0 + t * dx), y - (y0 + t * dy));
}

void blend(std::array<double, 3>& px, const std::array<double, 3>& color, double a) {
  for (int k = 0; k < 3; ++k) px[k] = a * color[k] + (1.0 - a) * px[k];
}

std::array<double, 3> jitter(std::array<double, 3> c, double amount, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-amount, amount);
  for (auto& v : c) v = std::clamp(v + u(rng), 0.0, 1.0);
  return c;
}

}  // namespace

const ExpressionCues& class_cues(int label) {
  if (label < 0 || label >= static_cast<int>(kCues.size())) throw DomainError("expression label out of range");
  return kCues[label];
}

FaceParams sample_face(int label, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  FaceParams p;
  p.label = label;
  p.cues = class_cues(label);
  p.cues.mouth_curvature += range(-0.05, 0.05);
  p.cues.mouth_open = std::max(0.0, p.cues.mouth_open + range(-0.05, 0.05));
  p.cues.brow_angle += range(-0.1, 0.1);
  p.cues.brow_raise += range(-0.1, 0.1);
  p.cues.eye_open = std::max(0.3, p.cues.eye_open + range(-0.1, 0.1));
  p.center_y = range(47.0, 53.0);
  p.head_rx = range(30.0, 35.0);
  p.head_ry = range(38.0, 42.0);
  static constexpr std::array<std::array<double, 3>, 4> kSkin{
      {{0.93, 0.78, 0.66}, {0.80, 0.62, 0.48}, {0.62, 0.45, 0.33}, {0.45, 0.32, 0.24}}};
  p.skin = jitter(kSkin[std::uniform_int_distribution<int>(0, 3)(rng)], 0.04, rng);
  // Muted backgrounds: a gray level with a mild tint.
  const double level = range(0.2, 0.85);
  p.background = jitter({level, level, level}, 0.08, rng);
  p.background_bottom = jitter(p.background, 0.08, rng);
  p.brow_color = jitter({0.22, 0.15, 0.10}, 0.06, rng);
  p.noise_sigma = 0.015;
  p.noise_seed = rng();
  return p;
}

Image render_face(const FaceParams& p) {
  const int n = kToyImageSize;
  Image image(n, n, 3);
  const double cx = kFaceCenterX;
  const double cy = p.center_y;
  const auto& q = p.cues;

  const double eye_y = cy - 0.22 * p.head_ry;
  const double eye_dx = 0.38 * p.head_rx;
  const double eye_rx = 6.5;
  const double eye_ry = 3.2 * q.eye_open;
  const double brow_y = eye_y - 8.0 - 3.0 * q.brow_raise;
  const double brow_len = 12.0;
  const double brow_tilt = 4.0 * q.brow_angle;
  const double mouth_y = cy + 0.45 * p.head_ry;
  const double mouth_depth = 8.0 * q.mouth_open;

  std::mt19937_64 noise_rng(p.noise_seed);
  std::normal_distribution<double> noise(0.0, p.noise_sigma);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double px = x + 0.5;
      const double py = y + 0.5;
      const double ax = cx + std::abs(px - cx);  // mirror onto the right half
      const double t = py / n;
      std::array<double, 3> c{};
      for (int k = 0; k < 3; ++k) c[k] = (1.0 - t) * p.background[k] + t * p.background_bottom[k];

      blend(c, p.skin, coverage(ellipse_sd(px, py, cx, cy, p.head_rx, p.head_ry)));

      // Nose shading.
      std::array<double, 3> shade{p.skin[0] * 0.82, p.skin[1] * 0.78, p.skin[2] * 0.78};
      blend(c, shade, coverage(ellipse_sd(px, py, cx, cy + 0.08 * p.head_ry, 2.5, 6.0)));

      // Eyes: sclera then iris clipped to the eye.
      const double eye_cov = coverage(ellipse_sd(ax, py, cx + eye_dx, eye_y, eye_rx, eye_ry));
      blend(c, kSclera, eye_cov);
      const double iris_r = std::min(2.6, eye_ry);
      blend(c, kIris, std::min(eye_cov, coverage(ellipse_sd(ax, py, cx + eye_dx, eye_y, iris_r, iris_r))));

      // Brows: inner end (toward the center line) raised by brow_tilt.
      const double bx0 = cx + eye_dx - brow_len / 2.0;
      const double bx1 = cx + eye_dx + brow_len / 2.0;
      const double brow_d = segment_distance(ax, py, bx0, brow_y - brow_tilt / 2.0, bx1, brow_y + brow_tilt / 2.0);
      blend(c, p.brow_color, coverage(brow_d - 1.2));

      // Mouth: open interior below the lip curve, then the lip line.
      const double u = (px - cx) / kMouthHalfWidth;
      if (std::abs(u) <= 1.15) {
        const double curve = mouth_y - q.mouth_curvature * kMouthLift * u * u;
        const double taper = coverage((std::abs(u) - 1.0) * kMouthHalfWidth);
        if (mouth_depth > 0.0) {
          const double bottom = curve + mouth_depth * std::max(0.0, 1.0 - u * u);
          const double inside = std::min(coverage(curve - py), coverage(py - bottom));
          blend(c, kMouthInside, inside * taper);
        }
        blend(c, kLipColor, coverage(std::abs(py - curve) - 1.1) * taper);
      }

      for (int k = 0; k < 3; ++k) image.at(y, x, k) = static_cast<float>(std::clamp(c[k] + noise(noise_rng), 0.0, 1.0));
    }
  }
  return image;
}

std::filesystem::path generate_toy_dataset(int n, std::uint64_t seed, const std::filesystem::path& out_dir) {
  if (n <= 0) throw DomainError("dataset size must be positive");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  const auto manifest = out_dir / "labels.csv";
  std::ofstream out(manifest, std::ios::trunc);
  if (ec || !out) throw DataError(DataError::Code::kUnwritable, "cannot write to " + out_dir.string());
  out << "filename,label\n";
  for (int i = 0; i < n; ++i) {
    const int label = i % 7;
    std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(i));
    char name[32];
    std::snprintf(name, sizeof(name), "face_%05d.png", i);
    write_png(out_dir / name, render_face(sample_face(label, rng)));
    out << name << ',' << label << '\n';
  }
  if (!out) throw DataError(DataError::Code::kUnwritable, "failed writing " + manifest.string());
  return manifest;
}

Image make_occluder(OccluderFamily family, int size, std::mt19937_64& rng) {
  if (size <= 0) throw DomainError("occluder size must be positive");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  // Two saturated colors: one channel high, one low, one random.
  auto saturated = [&]() {
    std::array<double, 3> c{};
    const int hi = std::uniform_int_distribution<int>(0, 2)(rng);
    const int lo = (hi + 1 + std::uniform_int_distribution<int>(0, 1)(rng)) % 3;
    for (int k = 0; k < 3; ++k) c[k] = u(rng);
    c[hi] = 0.85 + 0.15 * u(rng);
    c[lo] = 0.1 * u(rng);
    return c;
  };
  const auto a = saturated();
  const auto b = saturated();
  const double period = 4.0 + 4.0 * u(rng);
  const double s = size;
  Image sprite(size, size, 4, 0.0f);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double nx = px / s - 0.5, ny = py / s - 0.5;
      bool inside = false;
      bool alt = false;
      switch (family) {
        case OccluderFamily::kDisc:
          inside = nx * nx + ny * ny <= 0.25;
          alt = std::fmod(std::hypot(nx, ny) * s, period) < period / 2.0;
          break;
        case OccluderFamily::kBar:
          inside = std::abs(ny) <= 0.22;
          alt = std::fmod(px, period) < period / 2.0;
          break;
        case OccluderFamily::kChecker:
          inside = true;
          alt = (static_cast<int>(px / period) + static_cast<int>(py / period)) % 2 == 0;
          break;
        case OccluderFamily::kStripes:
          inside = std::abs(nx) + std::abs(ny) <= 0.5;
          alt = std::fmod(px + py, period) < period / 2.0;
          break;
        case OccluderFamily::kTriangle:
          inside = py >= 0.0 && std::abs(nx) <= 0.5 * (py / s);
          alt = std::fmod(py, period) < period / 2.0;
          break;
        case OccluderFamily::kRing: {
          const double r = std::hypot(nx, ny);
          inside = r <= 0.5 && r >= 0.2;
          alt = std::fmod(std::atan2(ny, nx) + 4.0, 0.8) < 0.4;
          break;
        }
      }
      if (!inside) continue;
      const auto& c = alt ? a : b;
      for (int k = 0; k < 3; ++k) sprite.at(y, x, k) = static_cast<float>(c[k]);
      sprite.at(y, x, 3) = 1.0f;
    }
  }
  return sprite;
}

OccludedImage random_sprite_occlusion(const Image& image, std::mt19937_64& rng, const SpriteOptions& options) {
  if (options.families.empty()) throw DomainError("no occluder families to sample from");
  if (options.min_size <= 0 || options.max_size < options.min_size || options.max_size > image.height() ||
      options.max_size > image.width()) {
    throw DomainError("occluder size range does not fit the image");
  }
  const auto family =
      options.families[std::uniform_int_distribution<std::size_t>(0, options.families.size() - 1)(rng)];
  const int size = std::uniform_int_distribution<int>(options.min_size, options.max_size)(rng);
  const auto sprite = make_occluder(family, size, rng);
  const int row = std::uniform_int_distribution<int>(0, image.height() - size)(rng);
  const int col = std::uniform_int_distribution<int>(0, image.width() - size)(rng);
  return synth_occlude(image, sprite, row, col);
}

}  // namespace latent_ofer
