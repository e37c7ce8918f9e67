#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "vesselseg/grid.hpp"
#include "vesselseg/unet.hpp"

// Deliberately naive reference implementations used as test oracles.
namespace vesselseg::testkit {

/// AUC as P(p_vessel > p_background) + P(tie)/2 over all pairs, O(n^2).
double pairwise_auc(std::span<const Grid<float>> probs, std::span<const Grid<std::uint8_t>> masks);

/// Recounts the confusion matrix from scratch at every grid threshold and
/// keeps the first maximum.
std::pair<double, double> exhaustive_best_f1(std::span<const Grid<float>> probs,
                                             std::span<const Grid<std::uint8_t>> masks,
                                             const std::vector<double>& grid);

/// Parameter count obtained by listing every layer of the architecture.
std::size_t enumerate_unet_parameters(const UNetConfig& config);

/// Straight-loop U-Net forward in double precision, reading weights by name.
Grid<double> naive_unet_forward(const Model& model, const Grid<float>& input);

/// Occupied s x s boxes anchored at the origin, counted box by box.
std::size_t naive_box_count(const Grid<std::uint8_t>& mask, int s);

/// Rasterised Sierpinski triangle of side 2^order (Pascal's triangle mod 2).
Grid<std::uint8_t> sierpinski(int order);

}  // namespace vesselseg::testkit
