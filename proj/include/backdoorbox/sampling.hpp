#pragma once

#include <algorithm>
#include <cmath>

#include "backdoorbox/image.hpp"

namespace bbox {

enum class Interpolation { bilinear, nearest };
enum class Border { clamp, zero };

namespace detail {

inline float fetch(const FloatImage &img, int y, int x, int c, Border border) {
  if (border == Border::zero) {
    if (y < 0 || y >= img.height() || x < 0 || x >= img.width()) return 0.0f;
    return img.at(y, x, c);
  }
  y = std::clamp(y, 0, img.height() - 1);
  x = std::clamp(x, 0, img.width() - 1);
  return img.at(y, x, c);
}

} // namespace detail

/// Samples channel c at fractional pixel position (y, x).
inline float sample_pixel(const FloatImage &img, double y, double x, int c,
                          Interpolation mode, Border border) {
  if (mode == Interpolation::nearest) {
    const int yi = static_cast<int>(std::nearbyint(y));
    const int xi = static_cast<int>(std::nearbyint(x));
    return detail::fetch(img, yi, xi, c, border);
  }
  const double y0f = std::floor(y);
  const double x0f = std::floor(x);
  const int y0 = static_cast<int>(y0f);
  const int x0 = static_cast<int>(x0f);
  const double ty = y - y0f;
  const double tx = x - x0f;
  const double v00 = detail::fetch(img, y0, x0, c, border);
  const double v01 = detail::fetch(img, y0, x0 + 1, c, border);
  const double v10 = detail::fetch(img, y0 + 1, x0, c, border);
  const double v11 = detail::fetch(img, y0 + 1, x0 + 1, c, border);
  const double top = v00 * (1.0 - tx) + v01 * tx;
  const double bottom = v10 * (1.0 - tx) + v11 * tx;
  return static_cast<float>(top * (1.0 - ty) + bottom * ty);
}

/// Bilinear resize with half-pixel centers (no antialiasing). Resizing to the
/// same size is the identity.
inline FloatImage resize_bilinear(const FloatImage &img, int out_h, int out_w) {
  FloatImage out({out_h, out_w, img.channels()});
  const double sy = static_cast<double>(img.height()) / out_h;
  const double sx = static_cast<double>(img.width()) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double src_y = std::max(0.0, (y + 0.5) * sy - 0.5);
    for (int x = 0; x < out_w; ++x) {
      const double src_x = std::max(0.0, (x + 0.5) * sx - 0.5);
      for (int c = 0; c < img.channels(); ++c)
        out.at(y, x, c) =
            sample_pixel(img, src_y, src_x, c, Interpolation::bilinear, Border::clamp);
    }
  }
  return out;
}

} // namespace bbox
