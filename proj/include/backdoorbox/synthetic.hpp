#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "backdoorbox/dataset.hpp"
#include "backdoorbox/rng.hpp"

namespace bbox {

/// Procedurally rendered handwritten-style digits on a black background, the
/// same geometry as MNIST: glyph fitted into the central 20x20 box of a 28x28
/// image. Used as the offline stand-in for MNIST-like data.
namespace synthetic {

struct Point {
  double x, y;
};
using Stroke = std::vector<Point>;

inline Stroke arc(Point c, double rx, double ry, double from_deg, double to_deg, int steps = 16) {
  Stroke s;
  for (int i = 0; i <= steps; ++i) {
    const double a = (from_deg + (to_deg - from_deg) * i / steps) * std::numbers::pi / 180.0;
    s.push_back({c.x + rx * std::cos(a), c.y + ry * std::sin(a)});
  }
  return s;
}

inline Stroke concat(Stroke a, const Stroke &b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

/// Glyph strokes in the unit box (x right, y down).
inline std::vector<Stroke> glyph(int digit) {
  switch (digit) {
  case 0: return {arc({0.5, 0.5}, 0.30, 0.44, 0, 360, 24)};
  case 1: return {{{0.34, 0.22}, {0.52, 0.05}, {0.52, 0.95}}};
  case 2: return {concat(arc({0.5, 0.3}, 0.26, 0.24, 200, 390), Stroke{{0.2, 0.95}, {0.84, 0.95}})};
  case 3: return {arc({0.5, 0.28}, 0.24, 0.22, 200, 450), arc({0.5, 0.73}, 0.27, 0.23, -90, 160)};
  case 4: return {{{0.66, 0.95}, {0.66, 0.05}, {0.14, 0.66}, {0.88, 0.66}}};
  case 5:
    return {concat(Stroke{{0.8, 0.05}, {0.28, 0.05}, {0.25, 0.46}}, arc({0.48, 0.67}, 0.28, 0.27, -140, 150))};
  case 6: return {{{0.74, 0.05}, {0.3, 0.58}}, arc({0.5, 0.71}, 0.25, 0.24, 0, 360, 20)};
  case 7: return {{{0.14, 0.05}, {0.86, 0.05}, {0.42, 0.95}}};
  case 8: return {arc({0.5, 0.27}, 0.21, 0.22, 0, 360, 20), arc({0.5, 0.72}, 0.26, 0.23, 0, 360, 20)};
  default: return {arc({0.5, 0.3}, 0.25, 0.24, 0, 360, 20), {{0.75, 0.32}, {0.62, 0.95}}};
  }
}

inline double segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

inline Image render_digit(int digit, int side, Rng &rng) {
  const double unit = side / 28.0;
  const double angle = uniform_real(rng, -14.0, 14.0) * std::numbers::pi / 180.0;
  const double scale_y = uniform_real(rng, 0.78, 1.05);
  const double scale_x = scale_y * uniform_real(rng, 0.8, 1.15);
  const double shear = uniform_real(rng, -0.25, 0.25);
  const double shift_x = uniform_real(rng, -2.0, 2.0) * unit;
  const double shift_y = uniform_real(rng, -1.5, 1.5) * unit;
  const double half_width = uniform_real(rng, 0.9, 2.0) * unit;
  const double peak = uniform_real(rng, 0.85, 1.0);
  const double cos_a = std::cos(angle), sin_a = std::sin(angle);
  const double center = (side - 1) / 2.0;

  std::vector<std::pair<Point, Point>> segments;
  for (const auto &stroke : glyph(digit)) {
    Stroke placed;
    for (const auto &p : stroke) {
      const double jx = p.x + uniform_real(rng, -0.035, 0.035);
      const double jy = p.y + uniform_real(rng, -0.035, 0.035);
      double x = (jx - 0.5) * 20.0 * unit * scale_x;
      const double y = (jy - 0.5) * 20.0 * unit * scale_y;
      x += shear * y;
      placed.push_back({cos_a * x - sin_a * y + center + shift_x,
                        sin_a * x + cos_a * y + center + shift_y});
    }
    for (std::size_t i = 1; i < placed.size(); ++i) segments.emplace_back(placed[i - 1], placed[i]);
  }

  Image img({side, side, 1}, 0);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      double d = 1e9;
      for (const auto &[a, b] : segments) d = std::min(d, segment_distance({double(x), double(y)}, a, b));
      const double v = std::clamp(half_width + 0.5 - d, 0.0, 1.0) * peak;
      img.at(y, x, 0) = static_cast<std::uint8_t>(std::round(v * 255.0));
    }
  }
  return img;
}

} // namespace synthetic

/// Class-balanced synthetic digit dataset (labels cycle 0..9).
inline Dataset make_synthetic_digits(std::size_t count, std::uint64_t seed, Split split,
                                     int side = 28) {
  std::vector<ImageSample> samples(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = make_rng(seed, Stream::synthetic, {static_cast<std::uint64_t>(split), i});
    samples[i].label = static_cast<int>(i % 10);
    samples[i].index = i;
    samples[i].pixels = synthetic::render_digit(samples[i].label, side, rng);
  }
  return Dataset(std::move(samples), 10, split);
}

inline DatasetPair make_synthetic_digits_pair(std::size_t train_size, std::size_t test_size,
                                              std::uint64_t seed, int side = 28) {
  return {make_synthetic_digits(train_size, seed, Split::train, side),
          make_synthetic_digits(test_size, seed, Split::test, side)};
}

} // namespace bbox
