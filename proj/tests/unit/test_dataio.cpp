#include <gtest/gtest.h>

#include <fstream>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <set>

#include "support/tempdir.hpp"
#include "vesselseg/dataio.hpp"
#include "vesselseg/errors.hpp"
#include "vesselseg/image_io.hpp"

using namespace vesselseg;
using testkit::TempDir;

namespace {

Grid<std::uint8_t> ramp8(int w, int h) {
  Grid<std::uint8_t> g(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) g(x, y) = static_cast<std::uint8_t>((x * 7 + y * 13) % 256);
  return g;
}

void write_pair(const TempDir& dir, const std::string& id, int w, int h) {
  write_png8(dir / (id + ".png"), ramp8(w, h));
  Grid<std::uint8_t> m(w, h);
  m(0, 0) = 128;
  m(1, 0) = 255;
  write_png8(dir / (id + "_mask.png"), m);
}

}  // namespace

TEST(ImageIo, EightBitScaledByMax) {
  TempDir dir;
  const auto g = ramp8(9, 5);
  write_png8(dir / "a.png", g);
  const SLOImage img = load_image(dir / "a.png");
  EXPECT_EQ(img.id, "a");
  EXPECT_EQ(img.native_bit_depth, 8);
  ASSERT_EQ(img.pixels.width(), 9);
  ASSERT_EQ(img.pixels.height(), 5);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 9; ++x) EXPECT_FLOAT_EQ(img.pixels(x, y), static_cast<float>(g(x, y) / 255.0));
}

TEST(ImageIo, SixteenBitScaledByMax) {
  TempDir dir;
  Grid<std::uint16_t> g(3, 1);
  g(0, 0) = 0;
  g(1, 0) = 32768;
  g(2, 0) = 65535;
  write_png16(dir / "b.png", g);
  const SLOImage img = load_image(dir / "b.png");
  EXPECT_EQ(img.native_bit_depth, 16);
  EXPECT_FLOAT_EQ(img.pixels(0, 0), 0.0f);
  EXPECT_FLOAT_EQ(img.pixels(1, 0), static_cast<float>(32768.0 / 65535.0));
  EXPECT_FLOAT_EQ(img.pixels(2, 0), 1.0f);
}

TEST(ImageIo, MissingFileIsIoError) {
  TempDir dir;
  EXPECT_THROW(load_image(dir / "absent.png"), IoError);
}

TEST(ImageIo, UndecodableFileIsIoError) {
  TempDir dir;
  std::ofstream(dir / "junk.png") << "not an image";
  EXPECT_THROW(load_image(dir / "junk.png"), IoError);
}

TEST(ImageIo, ColourImageIsFormatErrorNamingChannels) {
  TempDir dir;
  cv::Mat rgb(4, 4, CV_8UC3, cv::Scalar(1, 2, 3));
  cv::imwrite((dir / "rgb.png").string(), rgb);
  try {
    load_image(dir / "rgb.png");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find('3'), std::string::npos);
  }
}

TEST(Mask, NonzeroBecomesVessel) {
  TempDir dir;
  write_pair(dir, "x", 4, 3);
  const VesselMask m = load_mask(dir / "x_mask.png");
  EXPECT_EQ(m.labels(0, 0), 1);
  EXPECT_EQ(m.labels(1, 0), 1);
  std::size_t on = 0;
  for (auto v : m.labels.values()) {
    EXPECT_TRUE(v == 0 || v == 1);
    on += v;
  }
  EXPECT_EQ(on, 2u);
}

TEST(Pairing, SizeMismatchThrows) {
  SLOImage img{"i", Grid<float>(4, 4), 8};
  VesselMask ok{Grid<std::uint8_t>(4, 4)};
  VesselMask bad{Grid<std::uint8_t>(4, 5)};
  EXPECT_NO_THROW(check_pair(img, ok));
  EXPECT_THROW(check_pair(img, bad), PairingError);
}

TEST(Manifest, RelativePathsCommentsAndBlankLines) {
  TempDir dir;
  std::filesystem::create_directories(dir / "imgs");
  write_pair(dir, "p1", 6, 4);
  write_pair(dir, "p2", 6, 4);
  {
    std::ofstream m(dir / "imgs" / "list.tsv");
    m << "# comment\n\n../p1.png\t../p1_mask.png\n" << (dir / "p2.png").string() << "\t../p2_mask.png\n";
  }
  const auto entries = read_manifest(dir / "imgs" / "list.tsv");
  ASSERT_EQ(entries.size(), 2u);
  const auto data = load_dataset(entries);
  ASSERT_EQ(data.size(), 2u);
  EXPECT_EQ(data[0].image.id, "p1");
  EXPECT_EQ(data[1].image.id, "p2");
}

TEST(Manifest, MalformedLineAndDuplicatesRejected) {
  TempDir dir;
  write_pair(dir, "p1", 6, 4);
  std::ofstream(dir / "bad.tsv") << "p1.png\n";
  EXPECT_THROW(read_manifest(dir / "bad.tsv"), ConfigError);
  std::ofstream(dir / "dup.tsv") << "p1.png\tp1_mask.png\np1.png\tp1_mask.png\n";
  EXPECT_THROW(load_dataset(read_manifest(dir / "dup.tsv")), ConfigError);
  EXPECT_THROW(read_manifest(dir / "none.tsv"), IoError);
}

TEST(Manifest, MismatchedPairIsPairingError) {
  TempDir dir;
  write_png8(dir / "a.png", ramp8(6, 4));
  write_png8(dir / "a_mask.png", Grid<std::uint8_t>(5, 4));
  std::ofstream(dir / "m.tsv") << "a.png\ta_mask.png\n";
  EXPECT_THROW(load_dataset(read_manifest(dir / "m.tsv")), PairingError);
}

namespace {
std::vector<std::string> ids(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("img" + std::to_string(i));
  return out;
}
}  // namespace

TEST(Split, DeterministicPartition) {
  const auto all = ids(30);
  const auto a = make_split(all, {24, 2, 4}, 99);
  const auto b = make_split(all, {24, 2, 4}, 99);
  EXPECT_EQ(a.train_ids, b.train_ids);
  EXPECT_EQ(a.val_ids, b.val_ids);
  EXPECT_EQ(a.test_ids, b.test_ids);
  EXPECT_EQ(a.train_ids.size(), 24u);
  EXPECT_EQ(a.val_ids.size(), 2u);
  EXPECT_EQ(a.test_ids.size(), 4u);
  std::set<std::string> seen(a.train_ids.begin(), a.train_ids.end());
  seen.insert(a.val_ids.begin(), a.val_ids.end());
  seen.insert(a.test_ids.begin(), a.test_ids.end());
  EXPECT_EQ(seen.size(), 30u);
  const auto c = make_split(all, {24, 2, 4}, 100);
  EXPECT_NE(a.train_ids, c.train_ids);
}

TEST(Split, CountsMustSumAndIdsBeUnique) {
  EXPECT_THROW(make_split(ids(30), {24, 2, 3}, 1), ConfigError);
  auto dup = ids(3);
  dup[2] = dup[0];
  EXPECT_THROW(make_split(dup, {1, 1, 1}, 1), ConfigError);
}

TEST(Split, FileRoundTrip) {
  TempDir dir;
  const auto s = make_split(ids(10), {6, 2, 2}, 5);
  write_split(dir / "split.txt", s);
  const auto r = read_split(dir / "split.txt");
  EXPECT_EQ(r.train_ids, s.train_ids);
  EXPECT_EQ(r.val_ids, s.val_ids);
  EXPECT_EQ(r.test_ids, s.test_ids);
  EXPECT_EQ(r.seed, 5u);
}

TEST(Windows, PatchesMatchCropsAndStayInBounds) {
  SLOImage img{"w", Grid<float>(40, 30), 8};
  VesselMask mask{Grid<std::uint8_t>(40, 30)};
  for (int y = 0; y < 30; ++y)
    for (int x = 0; x < 40; ++x) {
      img.pixels(x, y) = static_cast<float>(x + 100 * y);
      mask.labels(x, y) = static_cast<std::uint8_t>((x + y) % 2);
    }
  Rng rng(1);
  const auto windows = sample_windows(img, mask, 200, 16, 12, rng);
  ASSERT_EQ(windows.size(), 200u);
  std::set<std::pair<int, int>> origins;
  for (const auto& w : windows) {
    ASSERT_GE(w.origin_x, 0);
    ASSERT_GE(w.origin_y, 0);
    ASSERT_LE(w.origin_x, 40 - 16);
    ASSERT_LE(w.origin_y, 30 - 12);
    EXPECT_EQ(w.source_id, "w");
    EXPECT_EQ(w.image_patch, img.pixels.crop(w.origin_x, w.origin_y, 16, 12));
    EXPECT_EQ(w.mask_patch, mask.labels.crop(w.origin_x, w.origin_y, 16, 12));
    origins.insert({w.origin_x, w.origin_y});
  }
  EXPECT_GT(origins.size(), 100u);  // 25 x 19 positions; draws should spread
}

TEST(Windows, SameSeedSameOrigins) {
  SLOImage img{"w", Grid<float>(64, 64), 8};
  VesselMask mask{Grid<std::uint8_t>(64, 64)};
  Rng a(17), b(17);
  const auto wa = sample_windows(img, mask, 20, 32, 24, a);
  const auto wb = sample_windows(img, mask, 20, 32, 24, b);
  for (std::size_t i = 0; i < wa.size(); ++i) {
    EXPECT_EQ(wa[i].origin_x, wb[i].origin_x);
    EXPECT_EQ(wa[i].origin_y, wb[i].origin_y);
  }
}

TEST(Windows, WindowLargerThanImageReportsBothSizes) {
  SLOImage img{"small", Grid<float>(100, 80), 8};
  VesselMask mask{Grid<std::uint8_t>(100, 80)};
  Rng rng(1);
  try {
    sample_windows(img, mask, 1, 320, 240, rng);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("100x80"), std::string::npos) << msg;
    EXPECT_NE(msg.find("320x240"), std::string::npos) << msg;
  }
}
