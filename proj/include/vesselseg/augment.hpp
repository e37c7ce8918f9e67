#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "vesselseg/dataio.hpp"
#include "vesselseg/grid.hpp"
#include "vesselseg/rng.hpp"

namespace vesselseg {

struct Range {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double v) const { return v >= lo && v <= hi; }
};

/// Per-operation inclusion probabilities and parameter ranges for the
/// training-time augmentation suite.
struct AugmentationSpec {
  bool enabled = true;

  struct Affine {
    double probability = 0.5;
    Range scale{0.9, 1.1};
    Range rotation_deg{-15.0, 15.0};
    Range shear_deg{-10.0, 10.0};
  } affine;

  struct Equalize {
    double probability = 0.5;
  } equalize;

  struct Clahe {
    double probability = 0.5;
    Range clip_limit{1.0, 4.0};
    int tiles = 8;  // tiles per axis
  } clahe;

  struct Rescale {
    double probability = 0.5;
    Range low{0.0, 0.2};   // output lower bound is drawn from here
    Range high{0.8, 1.0};  // output upper bound is drawn from here
  } rescale;

  struct LogIntensity {
    double probability = 0.5;
    Range gain{0.5, 2.0};
  } log;

  struct Blur {
    double probability = 0.5;
    Range sigma{0.5, 2.0};  // pixels
  } blur;

  /// Throws ConfigError for probabilities outside [0,1], inverted ranges,
  /// non-positive scale, sigma, gain or clip limit, or overlapping rescale
  /// bounds.
  void validate() const;
};

struct AffineOp {
  double scale = 1.0;
  double rotation_deg = 0.0;
  double shear_deg = 0.0;
};
struct EqualizeOp {};
struct ClaheOp {
  double clip_limit = 2.0;
  int tiles = 8;
};
struct RescaleOp {
  double low = 0.0;
  double high = 1.0;
};
struct LogOp {
  double gain = 1.0;
};
struct BlurOp {
  double sigma = 1.0;
};

using AugmentationOp = std::variant<AffineOp, EqualizeOp, ClaheOp, RescaleOp, LogOp, BlurOp>;

std::string describe(const AugmentationOp& op);

/// Concrete operations in application order: affine, intensity operations
/// (equalise, CLAHE, rescale, log), blur.
struct AugmentationPlan {
  std::vector<AugmentationOp> ops;

  bool empty() const { return ops.empty(); }
  bool has_geometric() const;
};

/// Includes each operation independently with its probability and draws its
/// parameters uniformly from the spec's ranges. A disabled spec yields an
/// empty plan.
AugmentationPlan sample_plan(const AugmentationSpec& spec, Rng& rng);

/// True if every op is enabled in spec with parameters inside its ranges
/// and the ops appear in canonical order at most once each.
bool plan_within_spec(const AugmentationPlan& plan, const AugmentationSpec& spec);

/// Applies the plan. Affine warps the image bilinearly (border replicated)
/// and the mask by nearest neighbour (zero outside) with the same transform;
/// all other ops touch the image only. Image values end clamped to [0, 1].
WindowSample apply_plan(const AugmentationPlan& plan, const WindowSample& window);

// Individual operations, exposed for testing and reuse.

/// Scale about the window centre, then shear along x, then rotate.
void affine_transform(const AffineOp& op, Grid<float>& image, Grid<std::uint8_t>& mask);
void equalize_histogram(Grid<float>& image);
void clahe(Grid<float>& image, double clip_limit, int tiles);
/// Maps the image's [min, max] linearly onto [low, high].
void rescale_intensity(Grid<float>& image, double low, double high);
/// out = gain * log2(1 + v), clamped to [0, 1].
void log_intensity(Grid<float>& image, double gain);
void gaussian_blur(Grid<float>& image, double sigma);

}  // namespace vesselseg
