#include "vesselseg/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

#include "vesselseg/errors.hpp"

namespace vesselseg {

namespace {

constexpr int kBins = 256;

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ConfigError(std::string("augmentation.") + name + ".probability must lie in [0, 1]");
  }
}

void check_range(const Range& r, const char* name) {
  if (!(r.lo <= r.hi)) throw ConfigError(std::string("augmentation.") + name + " range has low > high");
}

template <typename Op>
int op_rank() {
  if constexpr (std::is_same_v<Op, AffineOp>) return 0;
  if constexpr (std::is_same_v<Op, EqualizeOp>) return 1;
  if constexpr (std::is_same_v<Op, ClaheOp>) return 2;
  if constexpr (std::is_same_v<Op, RescaleOp>) return 3;
  if constexpr (std::is_same_v<Op, LogOp>) return 4;
  if constexpr (std::is_same_v<Op, BlurOp>) return 5;
}

// sin/cos of an angle in degrees, exact at multiples of 90.
std::pair<double, double> sincos_deg(double deg) {
  const double quarter = deg / 90.0;
  if (quarter == std::round(quarter)) {
    static constexpr std::array<std::pair<double, double>, 4> exact{{{0, 1}, {1, 0}, {0, -1}, {-1, 0}}};
    const auto k = static_cast<long>(std::round(quarter));
    return exact[static_cast<std::size_t>(((k % 4) + 4) % 4)];
  }
  const double rad = deg * std::numbers::pi / 180.0;
  return {std::sin(rad), std::cos(rad)};
}

int bin_of(float v) { return std::clamp(static_cast<int>(v * kBins), 0, kBins - 1); }

}  // namespace

void AugmentationSpec::validate() const {
  check_probability(affine.probability, "affine");
  check_probability(equalize.probability, "equalize");
  check_probability(clahe.probability, "clahe");
  check_probability(rescale.probability, "rescale");
  check_probability(log.probability, "log");
  check_probability(blur.probability, "blur");
  check_range(affine.scale, "affine.scale");
  check_range(affine.rotation_deg, "affine.rotation");
  check_range(affine.shear_deg, "affine.shear");
  check_range(clahe.clip_limit, "clahe.clip_limit");
  check_range(rescale.low, "rescale.low");
  check_range(rescale.high, "rescale.high");
  check_range(log.gain, "log.gain");
  check_range(blur.sigma, "blur.sigma");
  if (!(affine.scale.lo > 0.0)) throw ConfigError("augmentation.affine.scale must be > 0");
  if (!(std::abs(affine.shear_deg.lo) < 90.0 && std::abs(affine.shear_deg.hi) < 90.0)) {
    throw ConfigError("augmentation.affine.shear must lie strictly within (-90, 90) degrees");
  }
  if (!(clahe.clip_limit.lo > 0.0)) throw ConfigError("augmentation.clahe.clip_limit must be > 0");
  if (clahe.tiles < 1) throw ConfigError("augmentation.clahe.tiles must be >= 1");
  if (!(rescale.low.lo >= 0.0 && rescale.high.hi <= 1.0 && rescale.low.hi <= rescale.high.lo)) {
    throw ConfigError("augmentation.rescale bounds must satisfy 0 <= low <= high <= 1");
  }
  if (!(log.gain.lo > 0.0)) throw ConfigError("augmentation.log.gain must be > 0");
  if (!(blur.sigma.lo > 0.0)) throw ConfigError("augmentation.blur.sigma must be > 0");
}

std::string describe(const AugmentationOp& op) {
  std::ostringstream out;
  std::visit(
      [&](const auto& o) {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, AffineOp>) {
          out << "affine(scale=" << o.scale << ", rotation=" << o.rotation_deg << ", shear=" << o.shear_deg << ")";
        } else if constexpr (std::is_same_v<T, EqualizeOp>) {
          out << "equalize";
        } else if constexpr (std::is_same_v<T, ClaheOp>) {
          out << "clahe(clip=" << o.clip_limit << ", tiles=" << o.tiles << ")";
        } else if constexpr (std::is_same_v<T, RescaleOp>) {
          out << "rescale(" << o.low << ", " << o.high << ")";
        } else if constexpr (std::is_same_v<T, LogOp>) {
          out << "log(gain=" << o.gain << ")";
        } else {
          out << "blur(sigma=" << o.sigma << ")";
        }
      },
      op);
  return out.str();
}

bool AugmentationPlan::has_geometric() const {
  return std::any_of(ops.begin(), ops.end(), [](const auto& op) { return std::holds_alternative<AffineOp>(op); });
}

AugmentationPlan sample_plan(const AugmentationSpec& spec, Rng& rng) {
  AugmentationPlan plan;
  if (!spec.enabled) return plan;
  auto draw = [&](const Range& r) { return rng.uniform(r.lo, r.hi); };
  if (rng.bernoulli(spec.affine.probability)) {
    AffineOp op;
    op.scale = draw(spec.affine.scale);
    op.rotation_deg = draw(spec.affine.rotation_deg);
    op.shear_deg = draw(spec.affine.shear_deg);
    plan.ops.emplace_back(op);
  }
  if (rng.bernoulli(spec.equalize.probability)) plan.ops.emplace_back(EqualizeOp{});
  if (rng.bernoulli(spec.clahe.probability)) {
    plan.ops.emplace_back(ClaheOp{draw(spec.clahe.clip_limit), spec.clahe.tiles});
  }
  if (rng.bernoulli(spec.rescale.probability)) {
    const double low = draw(spec.rescale.low);
    const double high = draw(spec.rescale.high);
    plan.ops.emplace_back(RescaleOp{low, high});
  }
  if (rng.bernoulli(spec.log.probability)) plan.ops.emplace_back(LogOp{draw(spec.log.gain)});
  if (rng.bernoulli(spec.blur.probability)) plan.ops.emplace_back(BlurOp{draw(spec.blur.sigma)});
  return plan;
}

bool plan_within_spec(const AugmentationPlan& plan, const AugmentationSpec& spec) {
  if (!spec.enabled) return plan.empty();
  int last_rank = -1;
  for (const auto& op : plan.ops) {
    const bool ok = std::visit(
        [&](const auto& o) {
          using T = std::decay_t<decltype(o)>;
          const int rank = op_rank<T>();
          if (rank <= last_rank) return false;
          last_rank = rank;
          if constexpr (std::is_same_v<T, AffineOp>) {
            return spec.affine.probability > 0 && spec.affine.scale.contains(o.scale) &&
                   spec.affine.rotation_deg.contains(o.rotation_deg) && spec.affine.shear_deg.contains(o.shear_deg);
          } else if constexpr (std::is_same_v<T, EqualizeOp>) {
            return spec.equalize.probability > 0;
          } else if constexpr (std::is_same_v<T, ClaheOp>) {
            return spec.clahe.probability > 0 && spec.clahe.clip_limit.contains(o.clip_limit) &&
                   o.tiles == spec.clahe.tiles;
          } else if constexpr (std::is_same_v<T, RescaleOp>) {
            return spec.rescale.probability > 0 && spec.rescale.low.contains(o.low) &&
                   spec.rescale.high.contains(o.high);
          } else if constexpr (std::is_same_v<T, LogOp>) {
            return spec.log.probability > 0 && spec.log.gain.contains(o.gain);
          } else {
            return spec.blur.probability > 0 && spec.blur.sigma.contains(o.sigma);
          }
        },
        op);
    if (!ok) return false;
  }
  return true;
}

void affine_transform(const AffineOp& op, Grid<float>& image, Grid<std::uint8_t>& mask) {
  if (!(op.scale > 0.0)) throw ConfigError("affine scale must be > 0");
  const int w = image.width();
  const int h = image.height();
  const auto [s, c] = sincos_deg(op.rotation_deg);
  const double shear = std::tan(op.shear_deg * std::numbers::pi / 180.0);
  // Forward map A = R * Sh * S; we need A^-1 = S^-1 * Sh^-1 * R^-1.
  // R^-1 = [c s; -s c], Sh^-1 = [1 -k; 0 1], S^-1 = I / scale.
  const double inv = 1.0 / op.scale;
  const double m00 = inv * (c + shear * s);
  const double m01 = inv * (s - shear * c);
  const double m10 = inv * (-s);
  const double m11 = inv * c;
  const double cx = (w - 1) / 2.0;
  const double cy = (h - 1) / 2.0;

  Grid<float> out_image(w, h);
  Grid<std::uint8_t> out_mask(w, h, 0);
  for (int y = 0; y < h; ++y) {
    const double dy = y - cy;
    for (int x = 0; x < w; ++x) {
      const double dx = x - cx;
      const double sx = m00 * dx + m01 * dy + cx;
      const double sy = m10 * dx + m11 * dy + cy;

      // Bilinear with border replication.
      const double bx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
      const double by = std::clamp(sy, 0.0, static_cast<double>(h - 1));
      const int x0 = static_cast<int>(std::floor(bx));
      const int y0 = static_cast<int>(std::floor(by));
      const int x1 = std::min(x0 + 1, w - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const double fx = bx - x0;
      const double fy = by - y0;
      const double top = image(x0, y0) + fx * (image(x1, y0) - image(x0, y0));
      const double bottom = image(x0, y1) + fx * (image(x1, y1) - image(x0, y1));
      out_image(x, y) = static_cast<float>(top + fy * (bottom - top));

      // Nearest neighbour, zero outside.
      const long nx = std::lround(sx);
      const long ny = std::lround(sy);
      if (nx >= 0 && nx < w && ny >= 0 && ny < h) out_mask(x, y) = mask(static_cast<int>(nx), static_cast<int>(ny));
    }
  }
  image = std::move(out_image);
  mask = std::move(out_mask);
}

void equalize_histogram(Grid<float>& image) {
  std::array<std::size_t, kBins> hist{};
  for (float v : image.values()) ++hist[static_cast<std::size_t>(bin_of(v))];
  std::array<std::size_t, kBins> cdf{};
  std::size_t running = 0;
  for (int b = 0; b < kBins; ++b) cdf[b] = running += hist[b];
  const std::size_t total = image.size();
  const std::size_t cdf_min = *std::find_if(cdf.begin(), cdf.end(), [](std::size_t v) { return v > 0; });
  if (total == cdf_min) return;  // constant image
  const double denom = static_cast<double>(total - cdf_min);
  for (float& v : image.values()) {
    v = static_cast<float>(static_cast<double>(cdf[bin_of(v)] - cdf_min) / denom);
  }
}

void clahe(Grid<float>& image, double clip_limit, int tiles) {
  if (tiles < 1) throw ConfigError("CLAHE tile count must be >= 1");
  const int w = image.width();
  const int h = image.height();
  const int nx = std::min(tiles, w);
  const int ny = std::min(tiles, h);
  auto x_edge = [&](int i) { return static_cast<int>(static_cast<long>(i) * w / nx); };
  auto y_edge = [&](int j) { return static_cast<int>(static_cast<long>(j) * h / ny); };

  // Clipped, redistributed cumulative mapping per tile, values in [0, 1].
  std::vector<std::array<float, kBins>> luts(static_cast<std::size_t>(nx) * ny);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      std::array<double, kBins> hist{};
      const int xa = x_edge(i), xb = x_edge(i + 1), ya = y_edge(j), yb = y_edge(j + 1);
      for (int y = ya; y < yb; ++y) {
        for (int x = xa; x < xb; ++x) hist[static_cast<std::size_t>(bin_of(image(x, y)))] += 1.0;
      }
      const double area = static_cast<double>(xb - xa) * (yb - ya);
      const double limit = std::max(1.0, clip_limit * area / kBins);
      double excess = 0.0;
      for (double& v : hist) {
        if (v > limit) {
          excess += v - limit;
          v = limit;
        }
      }
      const double share = excess / kBins;
      double running = 0.0;
      auto& lut = luts[static_cast<std::size_t>(j) * nx + i];
      for (int b = 0; b < kBins; ++b) {
        running += hist[b] + share;
        lut[b] = static_cast<float>(std::min(1.0, running / area));
      }
    }
  }

  const double tile_w = static_cast<double>(w) / nx;
  const double tile_h = static_cast<double>(h) / ny;
  Grid<float> out(w, h);
  for (int y = 0; y < h; ++y) {
    const double ty = (y + 0.5) / tile_h - 0.5;
    const int j0 = std::clamp(static_cast<int>(std::floor(ty)), 0, ny - 1);
    const int j1 = std::min(j0 + 1, ny - 1);
    const double wy = std::clamp(ty - j0, 0.0, 1.0);
    for (int x = 0; x < w; ++x) {
      const double tx = (x + 0.5) / tile_w - 0.5;
      const int i0 = std::clamp(static_cast<int>(std::floor(tx)), 0, nx - 1);
      const int i1 = std::min(i0 + 1, nx - 1);
      const double wx = std::clamp(tx - i0, 0.0, 1.0);
      const auto b = static_cast<std::size_t>(bin_of(image(x, y)));
      const double v00 = luts[static_cast<std::size_t>(j0) * nx + i0][b];
      const double v10 = luts[static_cast<std::size_t>(j0) * nx + i1][b];
      const double v01 = luts[static_cast<std::size_t>(j1) * nx + i0][b];
      const double v11 = luts[static_cast<std::size_t>(j1) * nx + i1][b];
      const double top = v00 + wx * (v10 - v00);
      const double bottom = v01 + wx * (v11 - v01);
      out(x, y) = static_cast<float>(top + wy * (bottom - top));
    }
  }
  image = std::move(out);
}

void rescale_intensity(Grid<float>& image, double low, double high) {
  if (image.empty()) return;
  const auto [mn, mx] = std::minmax_element(image.values().begin(), image.values().end());
  const double lo_in = *mn;
  const double span = static_cast<double>(*mx) - lo_in;
  for (float& v : image.values()) {
    const double t = span > 0.0 ? (v - lo_in) / span : 0.0;
    v = static_cast<float>(std::clamp(low + t * (high - low), low, high));
  }
}

void log_intensity(Grid<float>& image, double gain) {
  for (float& v : image.values()) v = static_cast<float>(std::clamp(gain * std::log2(1.0 + v), 0.0, 1.0));
}

void gaussian_blur(Grid<float>& image, double sigma) {
  if (!(sigma > 0.0)) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) sum += kernel[k + radius] = std::exp(-(k * k) / (2.0 * sigma * sigma));
  for (double& k : kernel) k /= sum;

  const int w = image.width();
  const int h = image.height();
  Grid<float> tmp(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * image(std::clamp(x + k, 0, w - 1), y);
      tmp(x, y) = static_cast<float>(acc);
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp(x, std::clamp(y + k, 0, h - 1));
      image(x, y) = static_cast<float>(acc);
    }
  }
}

WindowSample apply_plan(const AugmentationPlan& plan, const WindowSample& window) {
  if (!window.image_patch.same_shape(window.mask_patch)) {
    throw DimensionError("window image and mask patches differ in size");
  }
  WindowSample out = window;
  if (plan.empty()) return out;
  for (const auto& op : plan.ops) {
    std::visit(
        [&](const auto& o) {
          using T = std::decay_t<decltype(o)>;
          if constexpr (std::is_same_v<T, AffineOp>) {
            affine_transform(o, out.image_patch, out.mask_patch);
          } else if constexpr (std::is_same_v<T, EqualizeOp>) {
            equalize_histogram(out.image_patch);
          } else if constexpr (std::is_same_v<T, ClaheOp>) {
            clahe(out.image_patch, o.clip_limit, o.tiles);
          } else if constexpr (std::is_same_v<T, RescaleOp>) {
            rescale_intensity(out.image_patch, o.low, o.high);
          } else if constexpr (std::is_same_v<T, LogOp>) {
            log_intensity(out.image_patch, o.gain);
          } else {
            gaussian_blur(out.image_patch, o.sigma);
          }
        },
        op);
  }
  for (float& v : out.image_patch.values()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

}  // namespace vesselseg
