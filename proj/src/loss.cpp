#include "vesselseg/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vesselseg/errors.hpp"

namespace vesselseg {

void LossParams::validate() const {
  if (lambda_dice < 0 || lambda_focal < 0 || !(lambda_dice + lambda_focal > 0)) {
    throw ConfigError("loss weights must be nonnegative with a positive sum");
  }
  if (!(gamma >= 0)) throw ConfigError("loss.gamma must be >= 0");
  if (!(epsilon > 0)) throw ConfigError("loss.epsilon must be > 0");
  if (!(prob_clip > 0 && prob_clip < 0.5)) throw ConfigError("loss.prob_clip must lie in (0, 0.5)");
}

LossTerms dice_focal_loss(std::span<const double> probs, std::span<const std::uint8_t> targets,
                          const LossParams& params, std::span<double> grad) {
  params.validate();
  if (probs.size() != targets.size()) {
    throw DimensionError("loss: " + std::to_string(probs.size()) + " probabilities vs " +
                         std::to_string(targets.size()) + " targets");
  }
  if (!grad.empty() && grad.size() != probs.size()) throw DimensionError("loss: gradient buffer size mismatch");
  const std::size_t n = probs.size();
  if (n == 0) throw DimensionError("loss: empty input");

  double intersection = 0.0;
  double sum_p = 0.0;
  double sum_g = 0.0;
  double focal_sum = 0.0;
  const double lo = params.prob_clip;
  const double hi = 1.0 - params.prob_clip;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = probs[i];
    const double g = targets[i] ? 1.0 : 0.0;
    intersection += p * g;
    sum_p += p;
    sum_g += g;
    const double pc = std::clamp(p, lo, hi);
    const double pt = g > 0 ? pc : 1.0 - pc;
    focal_sum += -std::pow(1.0 - pt, params.gamma) * std::log(pt);
  }
  const double eps = params.epsilon;
  const double denom = sum_p + sum_g + eps;
  LossTerms terms;
  terms.dice = 1.0 - (2.0 * intersection + eps) / denom;
  terms.focal = focal_sum / static_cast<double>(n);
  terms.total = params.lambda_dice * terms.dice + params.lambda_focal * terms.focal;

  if (!grad.empty()) {
    const double numer = 2.0 * intersection + eps;
    const double inv_denom2 = 1.0 / (denom * denom);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = probs[i];
      const bool vessel = targets[i] != 0;
      const double g = vessel ? 1.0 : 0.0;
      const double d_dice = -(2.0 * g * denom - numer) * inv_denom2;

      double d_focal = 0.0;
      if (p > lo && p < hi) {
        const double pt = vessel ? p : 1.0 - p;
        const double q = 1.0 - pt;
        // d/dpt of -(1-pt)^gamma log(pt)
        double d_pt = -std::pow(q, params.gamma) / pt;
        if (params.gamma != 0.0) d_pt += params.gamma * std::pow(q, params.gamma - 1.0) * std::log(pt);
        d_focal = (vessel ? d_pt : -d_pt) * inv_n;
      }
      grad[i] = params.lambda_dice * d_dice + params.lambda_focal * d_focal;
    }
  }
  return terms;
}

LossTerms dice_focal_loss(std::span<const Grid<float>> probs, std::span<const Grid<std::uint8_t>> targets,
                          const LossParams& params, std::vector<Grid<float>>* grads) {
  if (probs.size() != targets.size()) throw DimensionError("loss: batch sizes differ");
  std::size_t total = 0;
  for (std::size_t b = 0; b < probs.size(); ++b) {
    if (!probs[b].same_shape(targets[b])) {
      throw DimensionError("loss: batch element " + std::to_string(b) + " has mismatched shapes");
    }
    total += probs[b].size();
  }
  std::vector<double> p;
  std::vector<std::uint8_t> g;
  p.reserve(total);
  g.reserve(total);
  for (std::size_t b = 0; b < probs.size(); ++b) {
    p.insert(p.end(), probs[b].values().begin(), probs[b].values().end());
    g.insert(g.end(), targets[b].values().begin(), targets[b].values().end());
  }
  std::vector<double> grad(grads != nullptr ? total : 0);
  const LossTerms terms = dice_focal_loss(p, g, params, grad);
  if (grads != nullptr) {
    grads->clear();
    std::size_t offset = 0;
    for (const auto& pb : probs) {
      Grid<float> gb(pb.width(), pb.height());
      for (std::size_t i = 0; i < gb.size(); ++i) gb.values()[i] = static_cast<float>(grad[offset + i]);
      offset += gb.size();
      grads->push_back(std::move(gb));
    }
  }
  return terms;
}

}  // namespace vesselseg
