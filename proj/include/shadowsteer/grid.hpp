#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace shadowsteer {

/// Row-major H×W scalar field.
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, float fill = 0.0f);
  Grid(int height, int width, std::vector<float> values);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  float& operator()(int row, int col) { return values_[index(row, col)]; }
  float operator()(int row, int col) const { return values_[index(row, col)]; }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }

  bool same_shape(const Grid& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  float min() const;
  float max() const;
  float mean() const;
  bool all_finite() const;

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> values_;
};

/// Grid with a compile-time role so depth, shadow and mask fields cannot be
/// swapped by accident.
template <class Tag>
class TypedGrid : public Grid {
 public:
  using Grid::Grid;
  TypedGrid() = default;
  explicit TypedGrid(Grid grid) : Grid(std::move(grid)) {}

  const Grid& grid() const { return *this; }

  friend bool operator==(const TypedGrid&, const TypedGrid&) = default;
};

/// Elevation field over the unit square; 1 is highest.
using DepthMap = TypedGrid<struct DepthTag>;
/// Lighting occupancy; 1 = fully lit, 0 = fully shadowed.
using ShadowMap = TypedGrid<struct ShadowTag>;
/// 1 marks the region to shadow.
using BinaryMask = TypedGrid<struct MaskTag>;

/// H×W×3 image, interleaved RGB, values in [0,1].
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(int height, int width, float fill = 0.0f);
  RgbImage(int height, int width, std::vector<float> values);

  int height() const { return height_; }
  int width() const { return width_; }

  float& at(int row, int col, int channel) { return values_[index(row, col, channel)]; }
  float at(int row, int col, int channel) const { return values_[index(row, col, channel)]; }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }

  /// Rec.601 luma per pixel.
  Grid luminance() const;

  friend bool operator==(const RgbImage&, const RgbImage&) = default;

 private:
  std::size_t index(int row, int col, int channel) const {
    return (static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
            static_cast<std::size_t>(col)) * 3 + static_cast<std::size_t>(channel);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> values_;
};

}  // namespace shadowsteer
