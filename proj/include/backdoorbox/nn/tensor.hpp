#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "backdoorbox/error.hpp"
#include "backdoorbox/image.hpp"

namespace bbox::nn {

/// Dense float batch in N x C x H x W order. Vectors are N x F x 1 x 1.
struct Tensor {
  std::array<int, 4> shape{0, 0, 0, 0};
  std::vector<float> data;

  Tensor() = default;
  Tensor(int n, int c, int h, int w, float fill = 0.0f)
      : shape{n, c, h, w}, data(static_cast<std::size_t>(n) * c * h * w, fill) {}

  [[nodiscard]] int n() const { return shape[0]; }
  [[nodiscard]] int c() const { return shape[1]; }
  [[nodiscard]] int h() const { return shape[2]; }
  [[nodiscard]] int w() const { return shape[3]; }
  [[nodiscard]] std::size_t size() const { return data.size(); }
  [[nodiscard]] std::size_t sample_size() const {
    return static_cast<std::size_t>(shape[1]) * shape[2] * shape[3];
  }
  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(shape[2]) * shape[3]; }

  float &at(int n, int c, int y, int x) {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }
  [[nodiscard]] float at(int n, int c, int y, int x) const {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }

  [[nodiscard]] std::span<float> sample(int n) {
    return {data.data() + n * sample_size(), sample_size()};
  }
  [[nodiscard]] std::span<const float> sample(int n) const {
    return {data.data() + n * sample_size(), sample_size()};
  }

  [[nodiscard]] std::string shape_str() const {
    return std::to_string(shape[0]) + "x" + std::to_string(shape[1]) + "x" +
           std::to_string(shape[2]) + "x" + std::to_string(shape[3]);
  }

  bool operator==(const Tensor &) const = default;
};

/// Packs interleaved H x W x C images into an N x C x H x W batch.
inline Tensor batch_from_images(std::span<const FloatImage> images) {
  if (images.empty()) return {};
  const Shape s = images.front().shape();
  Tensor t(static_cast<int>(images.size()), s.channels, s.height, s.width);
  for (std::size_t n = 0; n < images.size(); ++n) {
    require_same_shape(s, images[n].shape(), "batch image");
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x)
        for (int c = 0; c < s.channels; ++c)
          t.at(static_cast<int>(n), c, y, x) = images[n].at(y, x, c);
  }
  return t;
}

inline FloatImage image_from_batch(const Tensor &t, int n) {
  FloatImage img({t.h(), t.w(), t.c()});
  for (int y = 0; y < t.h(); ++y)
    for (int x = 0; x < t.w(); ++x)
      for (int c = 0; c < t.c(); ++c) img.at(y, x, c) = t.at(n, c, y, x);
  return img;
}

} // namespace bbox::nn
