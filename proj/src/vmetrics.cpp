#include "vesselseg/vmetrics.hpp"

#include <algorithm>
#include <cmath>

#include "vesselseg/errors.hpp"

namespace vesselseg {

double vessel_density(const VesselMask& mask, const VesselMask* roi) {
  if (mask.labels.empty()) throw ConfigError("vessel density of an empty mask");
  const auto& m = mask.labels.values();
  if (roi == nullptr) {
    const auto vessels = std::count_if(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; });
    return static_cast<double>(vessels) / static_cast<double>(m.size());
  }
  if (!roi->labels.same_shape(mask.labels)) throw PairingError("region of interest does not match the mask size");
  const auto& r = roi->labels.values();
  std::size_t inside = 0;
  std::size_t vessels = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (r[i] == 0) continue;
    ++inside;
    if (m[i] != 0) ++vessels;
  }
  if (inside == 0) throw ConfigError("region of interest is empty");
  return static_cast<double>(vessels) / static_cast<double>(inside);
}

std::vector<int> default_box_sizes(int width, int height) {
  std::vector<int> sizes;
  const int limit = std::min(width, height) / 4;
  for (int s = 2; s <= limit; s *= 2) sizes.push_back(s);
  return sizes;
}

std::size_t count_occupied_boxes(const VesselMask& mask, int box_size, int offset_x, int offset_y) {
  if (box_size < 1) throw ConfigError("box size must be positive");
  // Box index of pixel x is (x + shift) / s, shift = (s - offset) % s.
  const int shift_x = (box_size - offset_x % box_size) % box_size;
  const int shift_y = (box_size - offset_y % box_size) % box_size;
  const int nx = (mask.width() + shift_x + box_size - 1) / box_size;
  std::vector<char> seen(static_cast<std::size_t>(nx), 0);
  std::size_t count = 0;
  int current_row = -1;
  for (int y = 0; y < mask.height(); ++y) {
    const int by = (y + shift_y) / box_size;
    if (by != current_row) {
      std::fill(seen.begin(), seen.end(), 0);
      current_row = by;
    }
    const auto row = mask.labels.row(y);
    for (int x = 0; x < mask.width(); ++x) {
      if (row[x] == 0) continue;
      const auto bx = static_cast<std::size_t>((x + shift_x) / box_size);
      if (!seen[bx]) {
        seen[bx] = 1;
        ++count;
      }
    }
  }
  return count;
}

FractalFit fractal_dimension(const VesselMask& mask, std::optional<std::vector<int>> box_sizes, bool multi_offset) {
  const auto& m = mask.labels.values();
  if (std::none_of(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; })) {
    throw UndefinedMetricError("fractal dimension is undefined for a mask without vessel pixels");
  }
  std::vector<int> sizes = box_sizes ? *box_sizes : default_box_sizes(mask.width(), mask.height());
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
  sizes.erase(std::remove_if(sizes.begin(), sizes.end(), [](int s) { return s < 1; }), sizes.end());
  if (sizes.size() < 3) {
    throw ConfigError("fractal dimension needs at least 3 box sizes, got " + std::to_string(sizes.size()));
  }

  FractalFit fit;
  for (int s : sizes) {
    double count = 0.0;
    if (multi_offset && s > 1) {
      const int half = s / 2;
      for (int oy : {0, half}) {
        for (int ox : {0, half}) count += static_cast<double>(count_occupied_boxes(mask, s, ox, oy));
      }
      count /= 4.0;
    } else {
      count = static_cast<double>(count_occupied_boxes(mask, s));
    }
    fit.points.push_back({s, std::log(static_cast<double>(s)), std::log(count), count});
  }

  // Least squares of log N against log(1/s) = -log s.
  const double n = static_cast<double>(fit.points.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& p : fit.points) {
    const double x = -p.log_box_size;
    sx += x;
    sy += p.log_count;
    sxx += x * x;
    sxy += x * p.log_count;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  fit.dimension = slope;
  fit.intercept = (sy - slope * sx) / n;
  double sse = 0.0;
  for (const auto& p : fit.points) {
    const double r = p.log_count - (fit.intercept + slope * -p.log_box_size);
    sse += r * r;
  }
  fit.residual = std::sqrt(sse / n);
  return fit;
}

VascularMetrics vascular_metrics(const VesselMask& mask, const VesselMask* roi) {
  VascularMetrics out;
  out.vessel_density = vessel_density(mask, roi);
  out.fit = fractal_dimension(mask);
  out.fractal_dimension = out.fit.dimension;
  return out;
}

}  // namespace vesselseg
