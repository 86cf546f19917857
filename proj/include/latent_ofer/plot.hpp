#pragma once

#include <array>
#include <vector>

#include "latent_ofer/image.hpp"

namespace latent_ofer {

struct PlotSeries {
  std::vector<double> x, y;
  std::array<float, 3> color{0.0f, 0.0f, 0.0f};
};

struct PlotRange {
  double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;
  double x_tick = 0.1, y_tick = 0.1;
};

// Axes, a light grid at the tick spacing, and each series as a polyline
// with square markers. No text rendering.
Image render_line_plot(const std::vector<PlotSeries>& series, const PlotRange& range, int width = 480,
                       int height = 360);

}  // namespace latent_ofer
