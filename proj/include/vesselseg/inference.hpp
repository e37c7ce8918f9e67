#pragma once

#include <string>
#include <vector>

#include "vesselseg/grid.hpp"
#include "vesselseg/unet.hpp"

namespace vesselseg {

/// Default binarisation threshold (the F1-optimal operating point reported
/// for the reference model).
inline constexpr double kDefaultThreshold = 0.45;

struct TilingPolicy {
  int tile_w = 512;
  int tile_h = 512;
  int overlap = 64;
  std::string blend = "linear";  // "linear" ramp or "uniform"

  /// Throws ConfigError unless overlap < min(tile_w, tile_h) / 2, tiles are
  /// divisible by `divisor`, and blend names a known scheme.
  void validate(int divisor) const;
};

/// Tile origin inside the (possibly padded) image, plus which sides touch a
/// neighbouring tile.
struct TilePlacement {
  int x = 0;
  int y = 0;
  bool left = false, right = false, top = false, bottom = false;
};

/// Grid of tiles covering width x height: stride tile - overlap, last tile
/// flush with the far edge. Both sizes must be at least one tile.
std::vector<TilePlacement> plan_tiles(int width, int height, const TilingPolicy& policy);

/// Unnormalised blend weight of each pixel inside one tile. Linear blending
/// ramps from 1/(overlap+1) to 1 across the overlap band on sides shared with
/// a neighbour; all other pixels weigh 1.
Grid<float> tile_weights(const TilePlacement& tile, const TilingPolicy& policy);

/// Mirror padding on the right and bottom (edge pixel not repeated).
Grid<float> reflect_pad(const Grid<float>& image, int width, int height);

int next_multiple(int value, int multiple);

/// Pads to the next multiple of the model's size divisor, forwards once and
/// crops back. forward_seconds (if non-null) receives the forward time.
/// Throws OutOfMemoryError if the pass cannot be allocated.
ProbabilityMap segment_full(const Model& model, const SLOImage& image, double* forward_seconds = nullptr);

/// Overlap-blended tiled inference. Tiles are forwarded concurrently.
ProbabilityMap segment_tiled(const Model& model, const SLOImage& image, const TilingPolicy& policy,
                             double* forward_seconds = nullptr);

/// Full pass unless `tiled` is set; falls back to tiling on OutOfMemoryError.
ProbabilityMap segment(const Model& model, const SLOImage& image, bool tiled, const TilingPolicy& policy,
                       double* forward_seconds = nullptr, bool* used_tiling = nullptr);

/// Vessel iff p >= threshold.
VesselMask binarize(const ProbabilityMap& map, double threshold);

}  // namespace vesselseg
