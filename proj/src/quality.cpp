#include "latent_ofer/quality.hpp"

#include <array>
#include <cmath>
#include <vector>

namespace latent_ofer {

namespace {

void check_same_shape(const Image& a, const Image& b) {
  if (a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels()) {
    throw ShapeError("image quality: images differ in shape");
  }
}

double psnr_from_mse(double mse) { return mse == 0.0 ? kPsnrIdentical : 10.0 * std::log10(1.0 / mse); }

std::array<double, kSsimWindow> gaussian_taps() {
  std::array<double, kSsimWindow> taps{};
  double total = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double x = i - kSsimWindow / 2;
    taps[i] = std::exp(-(x * x) / (2.0 * kSsimSigma * kSsimSigma));
    total += taps[i];
  }
  for (auto& t : taps) t /= total;
  return taps;
}

// Separable "valid" Gaussian filter of a single-channel plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int h, int w, int oh, int ow,
                                 const std::array<double, kSsimWindow>& taps) {
  std::vector<double> rows(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) acc += taps[k] * plane[static_cast<std::size_t>(y) * w + x + k];
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) acc += taps[k] * rows[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace

double psnr(const Image& reference, const Image& test) {
  check_same_shape(reference, test);
  const auto a = reference.pixels();
  const auto b = test.pixels();
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  return psnr_from_mse(sum / static_cast<double>(a.size()));
}

double masked_psnr(const Image& reference, const Image& test, const OcclusionMask& mask) {
  check_same_shape(reference, test);
  if (mask.none()) return kPsnrIdentical;
  if (reference.height() % mask.rows() != 0 || reference.width() % mask.cols() != 0) {
    throw ShapeError("masked_psnr: mask does not tile the image");
  }
  const int ph = reference.height() / mask.rows();
  const int pw = reference.width() / mask.cols();
  double sum = 0.0;
  std::size_t count = 0;
  for (int y = 0; y < reference.height(); ++y) {
    for (int x = 0; x < reference.width(); ++x) {
      if (!mask[(y / ph) * mask.cols() + x / pw]) continue;
      for (int c = 0; c < reference.channels(); ++c) {
        const double d = static_cast<double>(reference.at(y, x, c)) - static_cast<double>(test.at(y, x, c));
        sum += d * d;
        ++count;
      }
    }
  }
  return psnr_from_mse(sum / static_cast<double>(count));
}

double ssim(const Image& reference, const Image& test) {
  check_same_shape(reference, test);
  const int h = reference.height();
  const int w = reference.width();
  if (h < kSsimWindow || w < kSsimWindow) throw ShapeError("ssim: image smaller than the window");
  const int oh = h - kSsimWindow + 1;
  const int ow = w - kSsimWindow + 1;
  const auto taps = gaussian_taps();
  const std::size_t n = static_cast<std::size_t>(h) * w;

  double total = 0.0;
  for (int c = 0; c < reference.channels(); ++c) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (int r = 0; r < h; ++r) {
      for (int col = 0; col < w; ++col) {
        const std::size_t i = static_cast<std::size_t>(r) * w + col;
        x[i] = reference.at(r, col, c);
        y[i] = test.at(r, col, c);
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
      }
    }
    const auto mx = filter_valid(x, h, w, oh, ow, taps);
    const auto my = filter_valid(y, h, w, oh, ow, taps);
    const auto sxx = filter_valid(xx, h, w, oh, ow, taps);
    const auto syy = filter_valid(yy, h, w, oh, ow, taps);
    const auto sxy = filter_valid(xy, h, w, oh, ow, taps);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      acc += ((2.0 * mx[i] * my[i] + kSsimC1) * (2.0 * cov + kSsimC2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + kSsimC1) * (vx + vy + kSsimC2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / reference.channels();
}

ImageQuality image_quality(const Image& reference, const Image& test) {
  return ImageQuality{psnr(reference, test), ssim(reference, test)};
}

}  // namespace latent_ofer
