#pragma once

#include <cstdint>

#include "vesselseg/dataio.hpp"
#include "vesselseg/grid.hpp"

namespace vesselseg::testkit {

struct PhantomParams {
  int width = 768;
  int height = 768;
  std::uint64_t seed = 1;
  int roots = 5;
  double max_radius = 4.0;
  double min_radius = 1.2;
  double contrast = 0.25;  // vessels are darker than the background by this much
  double noise = 0.02;
};

/// Synthetic IR-SLO-like image: a branching vessel tree drawn dark on a
/// vignetted bright background with additive noise. The mask marks pixels
/// within each vessel's radius.
LabeledImage make_phantom(const PhantomParams& params, const char* id = "phantom");

/// Random vessel-like binary mask without an image, for metric tests.
Grid<std::uint8_t> random_tree_mask(int width, int height, std::uint64_t seed);

}  // namespace vesselseg::testkit
