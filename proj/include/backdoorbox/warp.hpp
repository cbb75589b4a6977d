#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "backdoorbox/dataset.hpp"
#include "backdoorbox/error.hpp"
#include "backdoorbox/image.hpp"
#include "backdoorbox/rng.hpp"
#include "backdoorbox/sampling.hpp"

namespace bbox {

/// Elastic warping trigger. Offsets are in normalized [-1,1] image
/// coordinates (corner-aligned), channel 0 = x, channel 1 = y.
struct WarpField {
  int grid_size = 0;
  double strength = 0.0;
  std::uint64_t seed = 0;
  Raster<double> control_grid; ///< k x k x 2 raw offsets drawn from U[-1,1]
  Raster<double> field;        ///< H x W x 2 dense offsets (sampling grid minus identity)

  [[nodiscard]] int height() const { return field.height(); }
  [[nodiscard]] int width() const { return field.width(); }
};

/// Raw control offsets divided by their mean absolute value, times strength.
inline Raster<double> scaled_control_grid(const Raster<double> &raw, double strength) {
  double mean_abs = 0.0;
  for (double v : raw.data()) mean_abs += std::abs(v);
  mean_abs /= static_cast<double>(raw.size());
  Raster<double> out(raw.shape());
  for (std::size_t i = 0; i < raw.size(); ++i)
    out.data()[i] = mean_abs > 0.0 ? raw.data()[i] / mean_abs * strength : 0.0;
  return out;
}

namespace detail {

inline std::array<double, 4> cubic_weights(double t) {
  constexpr double A = -0.75;
  const auto near = [](double x) { return ((A + 2) * x - (A + 3)) * x * x + 1; };
  const auto far = [](double x) { return ((A * x - 5 * A) * x + 8 * A) * x - 4 * A; };
  return {far(t + 1.0), near(t), near(1.0 - t), far(2.0 - t)};
}

} // namespace detail

/// Separable bicubic upsampling (cubic convolution, a = -0.75) with
/// corner-aligned sampling and border-replicated taps.
inline Raster<double> upsample_bicubic(const Raster<double> &src, int out_h, int out_w) {
  const int in_h = src.height(), in_w = src.width(), ch = src.channels();
  const auto axis = [](int out, int in, int o) {
    const double pos = out > 1 ? static_cast<double>(o) * (in - 1) / (out - 1) : 0.0;
    const int base = static_cast<int>(std::floor(pos));
    return std::pair{base, pos - base};
  };
  Raster<double> rows({out_h, in_w, ch});
  for (int y = 0; y < out_h; ++y) {
    const auto [base, t] = axis(out_h, in_h, y);
    const auto w = detail::cubic_weights(t);
    for (int x = 0; x < in_w; ++x)
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += w[k] * src.at(std::clamp(base - 1 + k, 0, in_h - 1), x, c);
        rows.at(y, x, c) = acc;
      }
  }
  Raster<double> out({out_h, out_w, ch});
  for (int x = 0; x < out_w; ++x) {
    const auto [base, t] = axis(out_w, in_w, x);
    const auto w = detail::cubic_weights(t);
    for (int y = 0; y < out_h; ++y)
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += w[k] * rows.at(y, std::clamp(base - 1 + k, 0, in_w - 1), c);
        out.at(y, x, c) = acc;
      }
  }
  return out;
}

inline double identity_coordinate(int i, int n) {
  return n > 1 ? -1.0 + 2.0 * i / (n - 1) : 0.0;
}

/// Upsampled control offsets are read in pixel units, so they are divided by
/// the image extent before being added to the identity grid.
inline WarpField build_warp_field(int grid_size, double strength, int height, int width,
                                  std::uint64_t seed) {
  if (grid_size < 2) throw ValidationError("grid_size", "must be at least 2");
  if (!(strength >= 0.0)) throw ValidationError("strength", "must be nonnegative");
  if (grid_size > std::min(height, width))
    throw ValidationError("grid_size", "k=" + std::to_string(grid_size) +
                                           " exceeds the image side " +
                                           std::to_string(std::min(height, width)));
  WarpField wf;
  wf.grid_size = grid_size;
  wf.strength = strength;
  wf.seed = seed;
  wf.control_grid = Raster<double>({grid_size, grid_size, 2});
  Rng rng = make_rng(seed, Stream::warp);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (auto &v : wf.control_grid.data()) v = unit(rng);

  const auto dense = upsample_bicubic(scaled_control_grid(wf.control_grid, strength), height, width);
  wf.field = Raster<double>({height, width, 2});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double ix = identity_coordinate(x, width), iy = identity_coordinate(y, height);
      const double gx = std::clamp(ix + dense.at(y, x, 0) / width, -1.0, 1.0);
      const double gy = std::clamp(iy + dense.at(y, x, 1) / height, -1.0, 1.0);
      wf.field.at(y, x, 0) = gx - ix;
      wf.field.at(y, x, 1) = gy - iy;
    }
  return wf;
}

/// Resamples at identity + field; out-of-range coordinates clamp to the border.
inline FloatImage warp_image(const FloatImage &img, const WarpField &wf,
                             Interpolation mode = Interpolation::bilinear) {
  if (img.height() != wf.height() || img.width() != wf.width())
    throw ShapeError("warp field is " + std::to_string(wf.height()) + "x" +
                     std::to_string(wf.width()) + ", image is " + img.shape().str());
  FloatImage out(img.shape());
  const double half_w = (img.width() - 1) / 2.0, half_h = (img.height() - 1) / 2.0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const double sx = std::clamp(x + wf.field.at(y, x, 0) * half_w, 0.0, img.width() - 1.0);
      const double sy = std::clamp(y + wf.field.at(y, x, 1) * half_h, 0.0, img.height() - 1.0);
      for (int c = 0; c < img.channels(); ++c)
        out.at(y, x, c) = sample_pixel(img, sy, sx, c, mode, Border::clamp);
    }
  return out;
}

inline ImageSample warp_image(const ImageSample &sample, const WarpField &wf,
                              Interpolation mode = Interpolation::bilinear) {
  ImageSample out = sample;
  out.pixels = to_bytes(warp_image(to_float(sample.pixels), wf, mode));
  return out;
}

inline Interpolation parse_interpolation(const std::string &s) {
  if (s == "bilinear") return Interpolation::bilinear;
  if (s == "nearest") return Interpolation::nearest;
  throw ValidationError("interpolation", "'" + s + "' (supported: bilinear, nearest)");
}

inline Transform make_warp_transform(WarpField wf, Interpolation mode = Interpolation::bilinear) {
  Transform t;
  t.name = "WaNetTrigger";
  t.params = {{"grid_size", wf.grid_size},
              {"strength", wf.strength},
              {"interpolation", mode == Interpolation::bilinear ? "bilinear" : "nearest"}};
  t.apply = [wf = std::move(wf), mode](FloatImage img, Rng &) { return warp_image(img, wf, mode); };
  return t;
}

} // namespace bbox
