#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include "backdoorbox/error.hpp"

namespace bbox {

struct Shape {
  int height = 0;
  int width = 0;
  int channels = 0;

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(height) * width * channels;
  }
  [[nodiscard]] std::string str() const {
    return std::to_string(height) + "x" + std::to_string(width) + "x" +
           std::to_string(channels);
  }
  auto operator<=>(const Shape &) const = default;
};

/// Interleaved H x W x C raster.
template <typename T> class Raster {
public:
  using value_type = T;

  Raster() = default;
  explicit Raster(Shape shape, T fill = T{})
      : shape_(shape), data_(shape.size(), fill) {
    if (shape.height < 0 || shape.width < 0 || shape.channels < 0)
      throw ShapeError("negative raster dimension " + shape.str());
  }
  Raster(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape.size())
      throw ShapeError("raster data holds " + std::to_string(data_.size()) +
                       " values, shape " + shape.str() + " needs " +
                       std::to_string(shape.size()));
  }

  [[nodiscard]] const Shape &shape() const { return shape_; }
  [[nodiscard]] int height() const { return shape_.height; }
  [[nodiscard]] int width() const { return shape_.width; }
  [[nodiscard]] int channels() const { return shape_.channels; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }

  T &at(int y, int x, int c) { return data_[offset(y, x, c)]; }
  [[nodiscard]] const T &at(int y, int x, int c) const { return data_[offset(y, x, c)]; }

  [[nodiscard]] std::vector<T> &data() { return data_; }
  [[nodiscard]] const std::vector<T> &data() const { return data_; }

  bool operator==(const Raster &) const = default;

private:
  [[nodiscard]] std::size_t offset(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * shape_.width + x) * shape_.channels + c;
  }

  Shape shape_{};
  std::vector<T> data_;
};

/// Canonical storage: intensities in [0,255].
using Image = Raster<std::uint8_t>;
/// Working view: intensities in [0,1].
using FloatImage = Raster<float>;

/// Clamps to [0,1], scales to [0,255] and rounds half away from zero.
inline std::uint8_t quantize(float v) {
  const float clamped = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::round(clamped * 255.0f));
}

inline FloatImage to_float(const Image &img) {
  FloatImage out(img.shape());
  std::transform(img.data().begin(), img.data().end(), out.data().begin(),
                 [](std::uint8_t v) { return static_cast<float>(v) / 255.0f; });
  return out;
}

inline Image to_bytes(const FloatImage &img) {
  Image out(img.shape());
  std::transform(img.data().begin(), img.data().end(), out.data().begin(), quantize);
  return out;
}

inline void clamp_unit(FloatImage &img) {
  for (auto &v : img.data()) v = std::clamp(v, 0.0f, 1.0f);
}

/// Snaps every value onto the 1/255 grid the uint8 storage can represent.
inline void requantize(FloatImage &img) {
  for (auto &v : img.data()) v = static_cast<float>(quantize(v)) / 255.0f;
}

inline void require_same_shape(const Shape &expected, const Shape &actual,
                               const std::string &what) {
  if (expected != actual)
    throw ShapeError(what + ": expected shape " + expected.str() + ", got " +
                     actual.str());
}

} // namespace bbox
