#include "vesselseg/dataio.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "vesselseg/errors.hpp"
#include "vesselseg/image_io.hpp"

namespace vesselseg {

SLOImage load_image(const std::filesystem::path& path) {
  const RawRaster raster = read_raster(path);
  const float scale = 1.0f / static_cast<float>((1u << raster.bit_depth) - 1u);
  SLOImage image;
  image.id = path.stem().string();
  image.native_bit_depth = raster.bit_depth;
  image.pixels = Grid<float>(raster.values.width(), raster.values.height());
  auto& dst = image.pixels.values();
  const auto& src = raster.values.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<float>(src[i]) * scale;
  return image;
}

VesselMask load_mask(const std::filesystem::path& path) {
  const RawRaster raster = read_raster(path);
  VesselMask mask;
  mask.labels = Grid<std::uint8_t>(raster.values.width(), raster.values.height());
  auto& dst = mask.labels.values();
  const auto& src = raster.values.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] != 0 ? 1 : 0;
  return mask;
}

void check_pair(const SLOImage& image, const VesselMask& mask) {
  if (image.width() != mask.width() || image.height() != mask.height()) {
    throw PairingError("mask for '" + image.id + "' is " + std::to_string(mask.width()) + "x" +
                       std::to_string(mask.height()) + " but the image is " +
                       std::to_string(image.width()) + "x" + std::to_string(image.height()));
  }
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  const auto base = path.parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw ConfigError("manifest '" + path.string() + "' line " + std::to_string(line_no) +
                        ": expected <image_path><TAB><mask_path>");
    }
    auto resolve = [&](std::filesystem::path p) { return p.is_relative() ? base / p : p; };
    entries.push_back({resolve(line.substr(0, tab)), resolve(line.substr(tab + 1))});
  }
  return entries;
}

std::vector<LabeledImage> load_dataset(const std::vector<ManifestEntry>& entries) {
  std::vector<LabeledImage> data;
  std::set<std::string> seen;
  data.reserve(entries.size());
  for (const auto& entry : entries) {
    LabeledImage item{load_image(entry.image_path), load_mask(entry.mask_path)};
    check_pair(item.image, item.mask);
    if (!seen.insert(item.image.id).second) {
      throw ConfigError("duplicate sample id '" + item.image.id + "' in manifest");
    }
    data.push_back(std::move(item));
  }
  return data;
}

DatasetSplit make_split(const std::vector<std::string>& ids, SplitCounts counts, std::uint64_t seed) {
  if (counts.train + counts.val + counts.test != ids.size()) {
    throw ConfigError("split counts " + std::to_string(counts.train) + "+" + std::to_string(counts.val) +
                      "+" + std::to_string(counts.test) + " do not sum to the " +
                      std::to_string(ids.size()) + " available ids");
  }
  if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size()) {
    throw ConfigError("split ids are not unique");
  }
  std::vector<std::string> order = ids;
  Rng rng(seed);
  rng.shuffle(order);
  DatasetSplit split;
  split.seed = seed;
  auto it = order.begin();
  split.train_ids.assign(it, it + static_cast<std::ptrdiff_t>(counts.train));
  it += static_cast<std::ptrdiff_t>(counts.train);
  split.val_ids.assign(it, it + static_cast<std::ptrdiff_t>(counts.val));
  it += static_cast<std::ptrdiff_t>(counts.val);
  split.test_ids.assign(it, order.end());
  return split;
}

void write_split(const std::filesystem::path& path, const DatasetSplit& split) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write split file '" + path.string() + "'");
  out << "# seed = " << split.seed << "\n";
  auto section = [&](const char* name, const std::vector<std::string>& ids) {
    out << "[" << name << "]\n";
    for (const auto& id : ids) out << id << "\n";
  };
  section("train", split.train_ids);
  section("val", split.val_ids);
  section("test", split.test_ids);
  if (!out) throw IoError("failed writing split file '" + path.string() + "'");
}

DatasetSplit read_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open split file '" + path.string() + "'");
  DatasetSplit split;
  std::vector<std::string>* current = nullptr;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("# seed = ", 0) == 0) {
      split.seed = std::stoull(line.substr(9));
      continue;
    }
    if (line.empty() || line.front() == '#') continue;
    if (line == "[train]") {
      current = &split.train_ids;
    } else if (line == "[val]") {
      current = &split.val_ids;
    } else if (line == "[test]") {
      current = &split.test_ids;
    } else if (current == nullptr) {
      throw ConfigError("split file '" + path.string() + "': id '" + line + "' before any section header");
    } else {
      current->push_back(line);
    }
  }
  return split;
}

std::vector<WindowSample> sample_windows(const SLOImage& image, const VesselMask& mask, std::size_t n,
                                         int window_w, int window_h, Rng& rng) {
  check_pair(image, mask);
  if (window_w < 1 || window_h < 1 || image.width() < window_w || image.height() < window_h) {
    throw DimensionError("image '" + image.id + "' is " + std::to_string(image.width()) + "x" +
                         std::to_string(image.height()) + ", smaller than the " +
                         std::to_string(window_w) + "x" + std::to_string(window_h) + " window");
  }
  std::vector<WindowSample> windows;
  windows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    WindowSample w;
    w.origin_x = static_cast<int>(rng.uniform_int(0, image.width() - window_w));
    w.origin_y = static_cast<int>(rng.uniform_int(0, image.height() - window_h));
    w.image_patch = image.pixels.crop(w.origin_x, w.origin_y, window_w, window_h);
    w.mask_patch = mask.labels.crop(w.origin_x, w.origin_y, window_w, window_h);
    w.source_id = image.id;
    windows.push_back(std::move(w));
  }
  return windows;
}

}  // namespace vesselseg
