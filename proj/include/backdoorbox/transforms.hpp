#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "backdoorbox/error.hpp"
#include "backdoorbox/image.hpp"
#include "backdoorbox/rng.hpp"
#include "backdoorbox/sampling.hpp"

namespace bbox {

using json = nlohmann::json;

/// Per-sample transform. Randomness comes only from the supplied generator,
/// which is seeded per (dataset seed, sample index, epoch).
struct Transform {
  std::string name;
  json params = json::object();
  std::function<FloatImage(FloatImage, Rng &)> apply;
};

using TransformChain = std::vector<Transform>;

inline FloatImage run_chain(std::span<const Transform> chain, FloatImage img, Rng &rng) {
  for (const auto &t : chain) {
    img = t.apply(std::move(img), rng);
    clamp_unit(img);
  }
  return img;
}

struct ColorJitter {
  double brightness = 0.0;
  double contrast = 0.0;
};

struct RandomAffine {
  double degrees = 0.0;
  double translate_x = 0.0; ///< fraction of width
  double translate_y = 0.0; ///< fraction of height
  double scale_min = 1.0;
  double scale_max = 1.0;
};

struct RandomHorizontalFlip {
  double p = 0.5;
};

struct RandomCrop {
  int padding = 0;
};

using TransformSpec = std::variant<ColorJitter, RandomAffine, RandomHorizontalFlip, RandomCrop>;

inline FloatImage apply_color_jitter(FloatImage img, double brightness_factor,
                                     double contrast_factor) {
  for (auto &v : img.data()) v = std::clamp(static_cast<float>(v * brightness_factor), 0.0f, 1.0f);
  // Contrast blends towards the mean grey level.
  const int channels = img.channels();
  double mean = 0.0;
  const std::size_t pixels = static_cast<std::size_t>(img.height()) * img.width();
  for (std::size_t i = 0; i < pixels; ++i) {
    if (channels == 3) {
      const float *p = &img.data()[i * 3];
      mean += 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    } else {
      for (int c = 0; c < channels; ++c) mean += img.data()[i * channels + c];
    }
  }
  mean /= channels == 3 ? static_cast<double>(pixels)
                        : static_cast<double>(pixels) * channels;
  for (auto &v : img.data())
    v = std::clamp(static_cast<float>(contrast_factor * v + (1.0 - contrast_factor) * mean),
                   0.0f, 1.0f);
  return img;
}

/// Rotation (degrees) and scaling about the image center followed by an
/// integer translation; nearest sampling, zero fill.
inline FloatImage apply_affine(const FloatImage &img, double angle_deg, int shift_x,
                               int shift_y, double scale) {
  FloatImage out(img.shape(), 0.0f);
  const double theta = angle_deg * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  const double cy = (img.height() - 1) / 2.0, cx = (img.width() - 1) / 2.0;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double dx = x - cx - shift_x;
      const double dy = y - cy - shift_y;
      const double sx = (cos_t * dx + sin_t * dy) / scale + cx;
      const double sy = (-sin_t * dx + cos_t * dy) / scale + cy;
      for (int c = 0; c < img.channels(); ++c)
        out.at(y, x, c) = sample_pixel(img, sy, sx, c, Interpolation::nearest, Border::zero);
    }
  }
  return out;
}

inline void validate(const TransformSpec &spec) {
  std::visit(
      [](const auto &s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ColorJitter>) {
          if (s.brightness < 0 || s.contrast < 0)
            throw ValidationError("ColorJitter", "amplitudes must be nonnegative");
        } else if constexpr (std::is_same_v<T, RandomAffine>) {
          if (s.degrees < 0 || s.translate_x < 0 || s.translate_y < 0)
            throw ValidationError("RandomAffine", "ranges must be nonnegative");
          if (s.scale_min <= 0 || s.scale_max > 2 || s.scale_min > s.scale_max)
            throw ValidationError("RandomAffine", "scale range must lie within (0, 2]");
        } else if constexpr (std::is_same_v<T, RandomHorizontalFlip>) {
          if (s.p < 0 || s.p > 1) throw ValidationError("RandomHorizontalFlip", "p outside [0,1]");
        } else {
          if (s.padding < 0) throw ValidationError("RandomCrop", "padding must be nonnegative");
        }
      },
      spec);
}

inline json to_json(const TransformSpec &spec) {
  return std::visit(
      [](const auto &s) -> json {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ColorJitter>)
          return {{"type", "ColorJitter"}, {"brightness", s.brightness}, {"contrast", s.contrast}};
        else if constexpr (std::is_same_v<T, RandomAffine>)
          return {{"type", "RandomAffine"},
                  {"degrees", s.degrees},
                  {"translate", {s.translate_x, s.translate_y}},
                  {"scale", {s.scale_min, s.scale_max}}};
        else if constexpr (std::is_same_v<T, RandomHorizontalFlip>)
          return {{"type", "RandomHorizontalFlip"}, {"p", s.p}};
        else
          return {{"type", "RandomCrop"}, {"padding", s.padding}};
      },
      spec);
}

inline TransformSpec transform_spec_from_json(const json &j) {
  const auto type = j.at("type").get<std::string>();
  TransformSpec spec;
  if (type == "ColorJitter") {
    spec = ColorJitter{j.value("brightness", 0.0), j.value("contrast", 0.0)};
  } else if (type == "RandomAffine") {
    RandomAffine a;
    a.degrees = j.value("degrees", 0.0);
    if (j.contains("translate")) {
      a.translate_x = j["translate"].at(0).get<double>();
      a.translate_y = j["translate"].at(1).get<double>();
    }
    if (j.contains("scale")) {
      a.scale_min = j["scale"].at(0).get<double>();
      a.scale_max = j["scale"].at(1).get<double>();
    }
    spec = a;
  } else if (type == "RandomHorizontalFlip") {
    spec = RandomHorizontalFlip{j.value("p", 0.5)};
  } else if (type == "RandomCrop") {
    spec = RandomCrop{j.value("padding", 0)};
  } else {
    throw ValidationError("type", "unknown transform '" + type +
                                      "' (supported: ColorJitter, RandomAffine, "
                                      "RandomHorizontalFlip, RandomCrop)");
  }
  validate(spec);
  return spec;
}

inline Transform make_transform(const TransformSpec &spec) {
  validate(spec);
  Transform t;
  t.params = to_json(spec);
  t.name = t.params["type"].get<std::string>();
  t.apply = std::visit(
      [](const auto &s) -> std::function<FloatImage(FloatImage, Rng &)> {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ColorJitter>) {
          return [s](FloatImage img, Rng &rng) {
            const double b = uniform_real(rng, std::max(0.0, 1.0 - s.brightness), 1.0 + s.brightness);
            const double c = uniform_real(rng, std::max(0.0, 1.0 - s.contrast), 1.0 + s.contrast);
            return apply_color_jitter(std::move(img), b, c);
          };
        } else if constexpr (std::is_same_v<T, RandomAffine>) {
          return [s](FloatImage img, Rng &rng) {
            const double angle = uniform_real(rng, -s.degrees, s.degrees);
            const double max_dx = s.translate_x * img.width();
            const double max_dy = s.translate_y * img.height();
            const int tx = static_cast<int>(std::round(uniform_real(rng, -max_dx, max_dx)));
            const int ty = static_cast<int>(std::round(uniform_real(rng, -max_dy, max_dy)));
            const double scale = uniform_real(rng, s.scale_min, s.scale_max);
            return apply_affine(img, angle, tx, ty, scale);
          };
        } else if constexpr (std::is_same_v<T, RandomHorizontalFlip>) {
          return [s](FloatImage img, Rng &rng) {
            if (uniform_real(rng, 0.0, 1.0) >= s.p) return img;
            FloatImage out(img.shape());
            for (int y = 0; y < img.height(); ++y)
              for (int x = 0; x < img.width(); ++x)
                for (int c = 0; c < img.channels(); ++c)
                  out.at(y, x, c) = img.at(y, img.width() - 1 - x, c);
            return out;
          };
        } else {
          return [s](FloatImage img, Rng &rng) {
            if (s.padding == 0) return img;
            const int oy = uniform_int(rng, 0, 2 * s.padding);
            const int ox = uniform_int(rng, 0, 2 * s.padding);
            FloatImage out(img.shape(), 0.0f);
            for (int y = 0; y < img.height(); ++y)
              for (int x = 0; x < img.width(); ++x) {
                const int sy = y + oy - s.padding, sx = x + ox - s.padding;
                if (sy < 0 || sy >= img.height() || sx < 0 || sx >= img.width()) continue;
                for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(sy, sx, c);
              }
            return out;
          };
        }
      },
      spec);
  return t;
}

inline TransformChain chain_from_json(const json &j) {
  TransformChain chain;
  if (j.is_null()) return chain;
  for (const auto &item : j) chain.push_back(make_transform(transform_spec_from_json(item)));
  return chain;
}

/// Ordered stochastic transforms a physical-world trigger goes through.
struct PhysicalAugmentation {
  std::vector<TransformSpec> steps;

  void validate() const {
    for (const auto &s : steps) {
      if (!std::holds_alternative<ColorJitter>(s) && !std::holds_alternative<RandomAffine>(s))
        throw ValidationError("physical_transformations",
                              "only ColorJitter and RandomAffine are physical transformations");
      bbox::validate(s);
    }
  }

  [[nodiscard]] TransformChain chain() const {
    TransformChain out;
    for (const auto &s : steps) out.push_back(make_transform(s));
    return out;
  }

  [[nodiscard]] json to_json() const {
    json arr = json::array();
    for (const auto &s : steps) arr.push_back(bbox::to_json(s));
    return arr;
  }

  static PhysicalAugmentation from_json(const json &j) {
    PhysicalAugmentation aug;
    for (const auto &item : j) aug.steps.push_back(transform_spec_from_json(item));
    aug.validate();
    return aug;
  }

  /// Defaults: ColorJitter(0.2, 0.2) then RandomAffine(10, (0.1, 0.1), (0.8, 0.9)).
  static PhysicalAugmentation standard() {
    return {{ColorJitter{0.2, 0.2}, RandomAffine{10.0, 0.1, 0.1, 0.8, 0.9}}};
  }
};

} // namespace bbox
