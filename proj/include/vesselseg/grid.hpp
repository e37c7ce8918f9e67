#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace vesselseg {

/// Dense row-major 2-D array. Index as grid(x, y) with x the column.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill) {}
  Grid(int width, int height, std::vector<T> data)
      : width_(width), height_(height), data_(std::move(data)) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int x, int y) { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const { return data_[index(x, y)]; }

  std::span<T> row(int y) {
    return {data_.data() + static_cast<std::size_t>(y) * width_, static_cast<std::size_t>(width_)};
  }
  std::span<const T> row(int y) const {
    return {data_.data() + static_cast<std::size_t>(y) * width_, static_cast<std::size_t>(width_)};
  }

  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  template <typename U>
  bool same_shape(const Grid<U>& other) const {
    return width_ == other.width() && height_ == other.height();
  }

  /// Copy of the rectangle [x0, x0+w) x [y0, y0+h). Caller guarantees bounds.
  Grid crop(int x0, int y0, int w, int h) const {
    Grid out(w, h);
    for (int y = 0; y < h; ++y) {
      const T* src = data_.data() + index(x0, y0 + y);
      std::copy(src, src + w, out.data_.data() + static_cast<std::size_t>(y) * w);
    }
    return out;
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.data_ == b.data_;
  }

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

/// Grayscale SLO image with intensities normalised to [0, 1].
struct SLOImage {
  std::string id;
  Grid<float> pixels;
  int native_bit_depth = 8;

  int width() const { return pixels.width(); }
  int height() const { return pixels.height(); }
};

/// Binary vessel annotation (0 background, 1 vessel).
struct VesselMask {
  Grid<std::uint8_t> labels;

  int width() const { return labels.width(); }
  int height() const { return labels.height(); }
};

/// Per-pixel vessel probabilities produced by a model.
struct ProbabilityMap {
  Grid<float> values;
  std::string source_id;
  std::string checkpoint_id;

  int width() const { return values.width(); }
  int height() const { return values.height(); }
};

}  // namespace vesselseg
