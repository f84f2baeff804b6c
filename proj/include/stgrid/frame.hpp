#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "stgrid/errors.hpp"

namespace stgrid {

// Row-major interleaved RGB image, values in [0,1].
struct Frame {
  static constexpr std::size_t kChannels = 3;

  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;

  Frame() = default;
  Frame(std::size_t h, std::size_t w, float fill = 0.0f)
      : height(h), width(w), data(h * w * kChannels, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) {
    return data[(y * width + x) * kChannels + c];
  }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * width + x) * kChannels + c];
  }

  bool same_shape(const Frame& other) const {
    return height == other.height && width == other.width;
  }
  std::size_t pixel_count() const { return height * width; }
};

inline void validate_frame(const Frame& f) {
  if (f.height == 0 || f.width == 0)
    throw InvalidArgument("frame dimensions must be positive");
  if (f.data.size() != f.height * f.width * Frame::kChannels)
    throw DimensionMismatch("frame buffer size does not match dimensions");
  for (float v : f.data)
    if (!std::isfinite(v)) throw InvalidArgument("frame contains non-finite values");
}

}  // namespace stgrid
