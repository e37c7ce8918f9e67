#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vesselseg/grid.hpp"

namespace vesselseg {

struct LossParams {
  double lambda_dice = 1.0;
  double lambda_focal = 1.0;
  double gamma = 2.0;       // focal exponent
  double epsilon = 1.0;     // Dice smoothing
  double prob_clip = 1e-7;  // focal term clamps p to [clip, 1 - clip]

  /// Throws ConfigError unless the weights are nonnegative with a positive
  /// sum, gamma >= 0, epsilon > 0 and 0 < prob_clip < 0.5.
  void validate() const;
};

struct LossTerms {
  double total = 0.0;
  double dice = 0.0;   // 1 - soft Dice coefficient
  double focal = 0.0;  // mean focal cross-entropy
};

/// Dice + focal loss pooled over every pixel given, i.e. one Dice
/// coefficient for the whole batch and the focal term averaged per pixel:
///
///   dice  = 1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps)
///   focal = mean(-(1 - p_t)^gamma log p_t),  p_t = g ? p : 1 - p
///
/// If grad is non-empty it receives dLoss/dp for every pixel.
LossTerms dice_focal_loss(std::span<const double> probs, std::span<const std::uint8_t> targets,
                          const LossParams& params, std::span<double> grad = {});

/// Batch form over probability and target grids; grads (if non-null) is
/// resized to match probs.
LossTerms dice_focal_loss(std::span<const Grid<float>> probs, std::span<const Grid<std::uint8_t>> targets,
                          const LossParams& params, std::vector<Grid<float>>* grads = nullptr);

}  // namespace vesselseg
