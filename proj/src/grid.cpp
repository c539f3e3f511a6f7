#include "shadowsteer/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "shadowsteer/errors.hpp"

namespace shadowsteer {

Grid::Grid(int height, int width, float fill)
    : height_(height), width_(width),
      values_(static_cast<std::size_t>(std::max(height, 0)) * static_cast<std::size_t>(std::max(width, 0)), fill) {
  if (height < 0 || width < 0) throw InputError("grid dimensions must be non-negative");
}

Grid::Grid(int height, int width, std::vector<float> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (height < 0 || width < 0 ||
      values_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width)) {
    throw InputError("grid value count does not match its dimensions");
  }
}

float Grid::min() const { return values_.empty() ? 0.0f : *std::min_element(values_.begin(), values_.end()); }
float Grid::max() const { return values_.empty() ? 0.0f : *std::max_element(values_.begin(), values_.end()); }

float Grid::mean() const {
  if (values_.empty()) return 0.0f;
  double sum = std::accumulate(values_.begin(), values_.end(), 0.0);
  return static_cast<float>(sum / static_cast<double>(values_.size()));
}

bool Grid::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](float v) { return std::isfinite(v); });
}

RgbImage::RgbImage(int height, int width, float fill)
    : height_(height), width_(width),
      values_(static_cast<std::size_t>(std::max(height, 0)) * static_cast<std::size_t>(std::max(width, 0)) * 3, fill) {
  if (height < 0 || width < 0) throw InputError("image dimensions must be non-negative");
}

RgbImage::RgbImage(int height, int width, std::vector<float> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (height < 0 || width < 0 ||
      values_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * 3) {
    throw InputError("image value count does not match its dimensions");
  }
}

Grid RgbImage::luminance() const {
  Grid out(height_, width_);
  for (int r = 0; r < height_; ++r) {
    for (int c = 0; c < width_; ++c) {
      out(r, c) = 0.299f * at(r, c, 0) + 0.587f * at(r, c, 1) + 0.114f * at(r, c, 2);
    }
  }
  return out;
}

}  // namespace shadowsteer
