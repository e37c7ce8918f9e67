#include "vesselseg/inference.hpp"

#include <algorithm>
#include <chrono>

#include "vesselseg/errors.hpp"
#include "vesselseg/parallel.hpp"

namespace vesselseg {

namespace {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  const int m = i % period;
  return m < n ? m : period - m;
}

std::vector<int> axis_positions(int length, int tile, int overlap) {
  std::vector<int> pos;
  if (length <= tile) return {0};
  const int step = tile - overlap;
  for (int p = 0; p + tile < length; p += step) pos.push_back(p);
  pos.push_back(length - tile);
  return pos;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void TilingPolicy::validate(int divisor) const {
  if (tile_w < 1 || tile_h < 1) throw ConfigError("tile sizes must be positive");
  if (tile_w % divisor != 0 || tile_h % divisor != 0) {
    throw ConfigError("tile size " + std::to_string(tile_w) + "x" + std::to_string(tile_h) +
                      " must be divisible by " + std::to_string(divisor));
  }
  if (overlap < 0 || 2 * overlap >= std::min(tile_w, tile_h)) {
    throw ConfigError("tile overlap " + std::to_string(overlap) + " must lie in [0, min(tile)/2)");
  }
  if (blend != "linear" && blend != "uniform") throw ConfigError("unknown blend scheme '" + blend + "'");
}

std::vector<TilePlacement> plan_tiles(int width, int height, const TilingPolicy& policy) {
  if (width < policy.tile_w || height < policy.tile_h) {
    throw DimensionError("image " + std::to_string(width) + "x" + std::to_string(height) +
                         " is smaller than one tile");
  }
  const auto xs = axis_positions(width, policy.tile_w, policy.overlap);
  const auto ys = axis_positions(height, policy.tile_h, policy.overlap);
  std::vector<TilePlacement> tiles;
  for (std::size_t j = 0; j < ys.size(); ++j) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
      TilePlacement t;
      t.x = xs[i];
      t.y = ys[j];
      t.left = i > 0;
      t.right = i + 1 < xs.size();
      t.top = j > 0;
      t.bottom = j + 1 < ys.size();
      tiles.push_back(t);
    }
  }
  return tiles;
}

Grid<float> tile_weights(const TilePlacement& tile, const TilingPolicy& policy) {
  Grid<float> w(policy.tile_w, policy.tile_h, 1.0f);
  if (policy.blend != "linear" || policy.overlap == 0) return w;
  const float band = static_cast<float>(policy.overlap + 1);
  auto ramp = [&](int i, int n, bool low_side, bool high_side) {
    float v = 1.0f;
    if (low_side && i < policy.overlap) v = std::min(v, static_cast<float>(i + 1) / band);
    if (high_side && n - 1 - i < policy.overlap) v = std::min(v, static_cast<float>(n - i) / band);
    return v;
  };
  for (int y = 0; y < policy.tile_h; ++y) {
    const float wy = ramp(y, policy.tile_h, tile.top, tile.bottom);
    for (int x = 0; x < policy.tile_w; ++x) w(x, y) = wy * ramp(x, policy.tile_w, tile.left, tile.right);
  }
  return w;
}

Grid<float> reflect_pad(const Grid<float>& image, int width, int height) {
  if (width == image.width() && height == image.height()) return image;
  Grid<float> out(width, height);
  for (int y = 0; y < height; ++y) {
    const int sy = reflect_index(y, image.height());
    for (int x = 0; x < width; ++x) out(x, y) = image(reflect_index(x, image.width()), sy);
  }
  return out;
}

int next_multiple(int value, int multiple) { return (value + multiple - 1) / multiple * multiple; }

ProbabilityMap segment_full(const Model& model, const SLOImage& image, double* forward_seconds) {
  const int div = model.config().size_divisor();
  const int w = image.width();
  const int h = image.height();
  Grid<float> padded;
  try {
    padded = reflect_pad(image.pixels, next_multiple(w, div), next_multiple(h, div));
  } catch (const std::bad_alloc&) {
    throw OutOfMemoryError("out of memory padding image '" + image.id + "'");
  }
  const auto start = std::chrono::steady_clock::now();
  Grid<float> probs = model.forward(padded);
  if (forward_seconds != nullptr) *forward_seconds = seconds_since(start);

  ProbabilityMap map;
  map.source_id = image.id;
  map.checkpoint_id = model.checkpoint_id();
  map.values = probs.width() == w && probs.height() == h ? std::move(probs) : probs.crop(0, 0, w, h);
  return map;
}

ProbabilityMap segment_tiled(const Model& model, const SLOImage& image, const TilingPolicy& policy,
                             double* forward_seconds) {
  policy.validate(model.config().size_divisor());
  const int w = image.width();
  const int h = image.height();
  const int pw = std::max(w, policy.tile_w);
  const int ph = std::max(h, policy.tile_h);
  const Grid<float> padded = reflect_pad(image.pixels, pw, ph);
  const auto tiles = plan_tiles(pw, ph, policy);

  const auto start = std::chrono::steady_clock::now();
  std::vector<Grid<float>> outputs(tiles.size());
  parallel_for(tiles.size(), [&](std::size_t i) {
    outputs[i] = model.forward(padded.crop(tiles[i].x, tiles[i].y, policy.tile_w, policy.tile_h));
  });
  if (forward_seconds != nullptr) *forward_seconds = seconds_since(start);

  Grid<double> acc(pw, ph, 0.0);
  Grid<double> weight_sum(pw, ph, 0.0);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const Grid<float> wt = tile_weights(tiles[i], policy);
    for (int y = 0; y < policy.tile_h; ++y) {
      for (int x = 0; x < policy.tile_w; ++x) {
        const double wv = wt(x, y);
        acc(tiles[i].x + x, tiles[i].y + y) += wv * outputs[i](x, y);
        weight_sum(tiles[i].x + x, tiles[i].y + y) += wv;
      }
    }
  }
  ProbabilityMap map;
  map.source_id = image.id;
  map.checkpoint_id = model.checkpoint_id();
  map.values = Grid<float>(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) map.values(x, y) = static_cast<float>(acc(x, y) / weight_sum(x, y));
  }
  return map;
}

ProbabilityMap segment(const Model& model, const SLOImage& image, bool tiled, const TilingPolicy& policy,
                       double* forward_seconds, bool* used_tiling) {
  if (!tiled) {
    try {
      if (used_tiling != nullptr) *used_tiling = false;
      return segment_full(model, image, forward_seconds);
    } catch (const OutOfMemoryError&) {
      // fall through to tiling
    }
  }
  if (used_tiling != nullptr) *used_tiling = true;
  return segment_tiled(model, image, policy, forward_seconds);
}

VesselMask binarize(const ProbabilityMap& map, double threshold) {
  VesselMask mask;
  mask.labels = Grid<std::uint8_t>(map.width(), map.height());
  const auto& p = map.values.values();
  auto& m = mask.labels.values();
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = p[i] >= threshold ? 1 : 0;
  return mask;
}

}  // namespace vesselseg
