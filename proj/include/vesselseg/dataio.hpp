#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vesselseg/grid.hpp"
#include "vesselseg/rng.hpp"

namespace vesselseg {

/// Loads a grayscale raster and scales it by 1/(2^bit_depth - 1).
/// The id is the file stem.
SLOImage load_image(const std::filesystem::path& path);

/// Loads an annotation raster; every nonzero value becomes vessel, so
/// artery and vein labels merge into one class.
VesselMask load_mask(const std::filesystem::path& path);

/// Throws PairingError if image and mask sizes differ.
void check_pair(const SLOImage& image, const VesselMask& mask);

struct LabeledImage {
  SLOImage image;
  VesselMask mask;
};

struct ManifestEntry {
  std::filesystem::path image_path;
  std::filesystem::path mask_path;
};

/// Parses `<image_path>\t<mask_path>` lines. Blank lines and lines starting
/// with '#' are skipped; relative paths resolve against the manifest's folder.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// Loads and pairs every manifest entry. Ids must be unique.
std::vector<LabeledImage> load_dataset(const std::vector<ManifestEntry>& entries);

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

struct DatasetSplit {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;
  std::uint64_t seed = 0;
};

/// Deterministic shuffle-and-cut partition of ids. Throws ConfigError if the
/// counts do not sum to ids.size() or ids repeat.
DatasetSplit make_split(const std::vector<std::string>& ids, SplitCounts counts, std::uint64_t seed);

/// Plain-text form: ids listed under [train], [val], [test] headers.
void write_split(const std::filesystem::path& path, const DatasetSplit& split);
DatasetSplit read_split(const std::filesystem::path& path);

struct WindowSample {
  Grid<float> image_patch;
  Grid<std::uint8_t> mask_patch;
  int origin_x = 0;
  int origin_y = 0;
  std::string source_id;
};

/// Draws n windows with origins independent and uniform over every valid
/// position. Overlap between windows is allowed.
std::vector<WindowSample> sample_windows(const SLOImage& image, const VesselMask& mask, std::size_t n,
                                         int window_w, int window_h, Rng& rng);

}  // namespace vesselseg
