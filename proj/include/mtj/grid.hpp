#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mtj/error.hpp"

namespace mtj {

/// Image-plane coordinate in pixels; (0, 0) is the centre of the top-left pixel.
struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

/// Row-major single-channel raster of floats.
class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, float fill = 0.0f)
      : width_(width), height_(height), values_(checked_size(width, height), fill) {}
  Grid(int width, int height, std::vector<float> values) : width_(width), height_(height), values_(std::move(values)) {
    if (values_.size() != checked_size(width, height)) throw DataError("grid: value count does not match dimensions");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  float& at(int x, int y) { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  float at(int x, int y) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }

  bool same_shape(const Grid& other) const { return width_ == other.width_ && height_ == other.height_; }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  static std::size_t checked_size(int width, int height) {
    if (width < 0 || height < 0) throw DataError("grid: negative dimensions");
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<float> values_;
};

/// Grayscale ultrasound frame (or phantom). Raw frames hold 0..255 intensities.
class Frame : public Grid {
 public:
  using Grid::Grid;
  explicit Frame(Grid g) : Grid(std::move(g)) {}
};

/// Per-pixel junction likelihood, every value in [0, 1].
class ProbabilityMap : public Grid {
 public:
  using Grid::Grid;
  explicit ProbabilityMap(Grid g) : Grid(std::move(g)) {}
};

}  // namespace mtj
