#pragma once

#include <cstdint>
#include <filesystem>

#include "vesselseg/grid.hpp"

namespace vesselseg {

/// Raw single-channel raster as stored on disk (8- or 16-bit).
struct RawRaster {
  Grid<std::uint16_t> values;
  int bit_depth = 8;
};

/// Reads an 8/16-bit single-channel PNG or TIFF. Throws IoError if the file
/// cannot be decoded and FormatError for multi-channel or float rasters.
RawRaster read_raster(const std::filesystem::path& path);

void write_png8(const std::filesystem::path& path, const Grid<std::uint8_t>& values);
void write_png16(const std::filesystem::path& path, const Grid<std::uint16_t>& values);

}  // namespace vesselseg
