#pragma once

#include <optional>
#include <span>
#include <vector>

#include "vesselseg/grid.hpp"

namespace vesselseg {

struct BoxCountPoint {
  int box_size = 0;
  double log_box_size = 0.0;  // log(s)
  double log_count = 0.0;     // log(N(s))
  double count = 0.0;         // N(s), averaged over offsets when enabled
};

struct FractalFit {
  double dimension = 0.0;  // slope of log N(s) against log(1/s)
  double intercept = 0.0;
  double residual = 0.0;   // RMS residual of the fit in log space
  std::vector<BoxCountPoint> points;
};

struct VascularMetrics {
  double vessel_density = 0.0;
  double fractal_dimension = 0.0;
  FractalFit fit;
};

/// Vessel pixels over counted pixels, restricted to roi when given. Throws
/// ConfigError for an empty mask or empty roi, PairingError if the roi size
/// differs.
double vessel_density(const VesselMask& mask, const VesselMask* roi = nullptr);

/// Powers of two from 2 up to min(width, height) / 4.
std::vector<int> default_box_sizes(int width, int height);

/// Number of s x s boxes (grid anchored at (offset_x, offset_y) - s) holding
/// at least one vessel pixel.
std::size_t count_occupied_boxes(const VesselMask& mask, int box_size, int offset_x = 0, int offset_y = 0);

/// Box-counting dimension: least-squares slope of log N(s) against log(1/s).
/// With multi_offset the count for each size is averaged over the grid
/// shifts {0, s/2} x {0, s/2}. Throws UndefinedMetricError for an empty mask
/// and ConfigError for fewer than three usable box sizes.
FractalFit fractal_dimension(const VesselMask& mask, std::optional<std::vector<int>> box_sizes = std::nullopt,
                             bool multi_offset = false);

VascularMetrics vascular_metrics(const VesselMask& mask, const VesselMask* roi = nullptr);

}  // namespace vesselseg
