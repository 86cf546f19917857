#include "latent_ofer/plot.hpp"

#include <algorithm>
#include <cmath>

#include "latent_ofer/errors.hpp"

namespace latent_ofer {

namespace {

constexpr int kMargin = 40;

void put(Image& img, int x, int y, const std::array<float, 3>& c) {
  if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) return;
  for (int k = 0; k < 3; ++k) img.at(y, x, k) = c[k];
}

void disc(Image& img, double cx, double cy, double r, const std::array<float, 3>& c) {
  for (int y = static_cast<int>(std::floor(cy - r)); y <= static_cast<int>(std::ceil(cy + r)); ++y) {
    for (int x = static_cast<int>(std::floor(cx - r)); x <= static_cast<int>(std::ceil(cx + r)); ++x) {
      if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= r) put(img, x, y, c);
    }
  }
}

void line(Image& img, double x0, double y0, double x1, double y1, double r, const std::array<float, 3>& c) {
  const int steps = std::max(1, static_cast<int>(std::ceil(2.0 * std::hypot(x1 - x0, y1 - y0))));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    disc(img, x0 + t * (x1 - x0), y0 + t * (y1 - y0), r, c);
  }
}

}  // namespace

Image render_line_plot(const std::vector<PlotSeries>& series, const PlotRange& range, int width, int height) {
  if (width <= 2 * kMargin || height <= 2 * kMargin) throw DomainError("plot is too small");
  if (!(range.x_max > range.x_min) || !(range.y_max > range.y_min)) throw DomainError("empty plot range");
  Image img(height, width, 3, 1.0f);
  const double left = kMargin, right = width - kMargin / 2.0;
  const double top = kMargin / 2.0, bottom = height - kMargin;
  auto sx = [&](double x) { return left + (x - range.x_min) / (range.x_max - range.x_min) * (right - left); };
  auto sy = [&](double y) { return bottom - (y - range.y_min) / (range.y_max - range.y_min) * (bottom - top); };

  const std::array<float, 3> grid{0.88f, 0.88f, 0.88f};
  const std::array<float, 3> axis{0.0f, 0.0f, 0.0f};
  if (range.x_tick > 0) {
    for (double x = range.x_min; x <= range.x_max + 1e-9; x += range.x_tick) {
      line(img, sx(x), top, sx(x), bottom, 0.5, grid);
      line(img, sx(x), bottom, sx(x), bottom + 5, 0.7, axis);
    }
  }
  if (range.y_tick > 0) {
    for (double y = range.y_min; y <= range.y_max + 1e-9; y += range.y_tick) {
      line(img, left, sy(y), right, sy(y), 0.5, grid);
      line(img, left - 5, sy(y), left, sy(y), 0.7, axis);
    }
  }
  line(img, left, bottom, right, bottom, 0.9, axis);
  line(img, left, top, left, bottom, 0.9, axis);

  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ShapeError("plot series x/y lengths differ");
    for (std::size_t i = 1; i < s.x.size(); ++i) {
      line(img, sx(s.x[i - 1]), sy(s.y[i - 1]), sx(s.x[i]), sy(s.y[i]), 1.3, s.color);
    }
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const int cx = static_cast<int>(std::lround(sx(s.x[i])));
      const int cy = static_cast<int>(std::lround(sy(s.y[i])));
      for (int dy = -3; dy <= 3; ++dy) {
        for (int dx = -3; dx <= 3; ++dx) put(img, cx + dx, cy + dy, s.color);
      }
    }
  }
  return img;
}

}  // namespace latent_ofer
