#include "vesselseg/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "vesselseg/errors.hpp"

namespace vesselseg {

RawRaster read_raster(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw IoError("cannot read image '" + path.string() + "': file does not exist");
  }
  cv::Mat mat;
  try {
    mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception& e) {
    throw IoError("cannot decode image '" + path.string() + "': " + e.what());
  }
  if (mat.empty()) {
    throw IoError("cannot decode image '" + path.string() + "'");
  }
  if (mat.channels() != 1) {
    throw FormatError("image '" + path.string() + "' has " + std::to_string(mat.channels()) +
                      " channels; expected a single grayscale channel");
  }
  RawRaster raster;
  raster.values = Grid<std::uint16_t>(mat.cols, mat.rows);
  switch (mat.depth()) {
    case CV_8U:
      raster.bit_depth = 8;
      for (int y = 0; y < mat.rows; ++y) {
        const auto* src = mat.ptr<std::uint8_t>(y);
        auto dst = raster.values.row(y);
        for (int x = 0; x < mat.cols; ++x) dst[x] = src[x];
      }
      break;
    case CV_16U:
      raster.bit_depth = 16;
      for (int y = 0; y < mat.rows; ++y) {
        const auto* src = mat.ptr<std::uint16_t>(y);
        auto dst = raster.values.row(y);
        for (int x = 0; x < mat.cols; ++x) dst[x] = src[x];
      }
      break;
    default:
      throw FormatError("image '" + path.string() + "' is not an 8- or 16-bit unsigned raster");
  }
  return raster;
}

namespace {

template <typename T>
void write_png(const std::filesystem::path& path, const Grid<T>& values, int cv_type) {
  cv::Mat mat(values.height(), values.width(), cv_type,
              const_cast<T*>(values.data()));
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), mat);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write '" + path.string() + "': " + e.what());
  }
  if (!ok) throw IoError("cannot write '" + path.string() + "'");
}

}  // namespace

void write_png8(const std::filesystem::path& path, const Grid<std::uint8_t>& values) {
  write_png(path, values, CV_8UC1);
}

void write_png16(const std::filesystem::path& path, const Grid<std::uint16_t>& values) {
  write_png(path, values, CV_16UC1);
}

}  // namespace vesselseg
