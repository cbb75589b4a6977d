#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "backdoorbox/dataset.hpp"
#include "backdoorbox/error.hpp"
#include "backdoorbox/image.hpp"
#include "backdoorbox/rng.hpp"
#include "backdoorbox/transforms.hpp"

namespace bbox {

/// Pixel pattern P plus per-pixel blend weight W:
///   x' = (1 - W) * x + W * P
/// The pattern may have one channel (broadcast) or the image's channel count.
struct TriggerPattern {
  Image pattern;
  Raster<float> weight; ///< H x W x 1, entries in [0,1]

  void validate(const Shape &image_shape) const {
    const Shape ps = pattern.shape();
    if (ps.height != image_shape.height || ps.width != image_shape.width ||
        (ps.channels != 1 && ps.channels != image_shape.channels))
      throw ShapeError("trigger pattern: expected shape " + image_shape.str() + " (or 1 channel), got " +
                       ps.str());
    if (weight.height() != image_shape.height || weight.width() != image_shape.width ||
        weight.channels() != 1)
      throw ShapeError("trigger weight: expected shape " +
                       Shape{image_shape.height, image_shape.width, 1}.str() + ", got " +
                       weight.shape().str());
    for (float w : weight.data())
      if (!(w >= 0.0f && w <= 1.0f)) throw ValidationError("weight", "entries must lie in [0,1]");
  }

  [[nodiscard]] bool binary_weight() const {
    return std::all_of(weight.data().begin(), weight.data().end(),
                       [](float w) { return w == 0.0f || w == 1.0f; });
  }

  /// Square of `size` pixels at `value` in the bottom-right corner.
  static TriggerPattern corner_patch(const Shape &shape, int size = 3, std::uint8_t value = 255) {
    if (size <= 0 || size > std::min(shape.height, shape.width))
      throw ValidationError("patch_size", "must lie in [1, min(H,W)]");
    TriggerPattern t;
    t.pattern = Image({shape.height, shape.width, 1}, 0);
    t.weight = Raster<float>({shape.height, shape.width, 1}, 0.0f);
    for (int y = shape.height - size; y < shape.height; ++y)
      for (int x = shape.width - size; x < shape.width; ++x) {
        t.pattern.at(y, x, 0) = value;
        t.weight.at(y, x, 0) = 1.0f;
      }
    return t;
  }

  /// Full-image blend with uniform weight alpha.
  static TriggerPattern blended(Image pattern, float alpha) {
    if (!(alpha >= 0.0f && alpha <= 1.0f)) throw ValidationError("alpha", "must lie in [0,1]");
    TriggerPattern t;
    t.weight = Raster<float>({pattern.height(), pattern.width(), 1}, alpha);
    t.pattern = std::move(pattern);
    return t;
  }

  /// Uniform noise pattern used as the default blend target.
  static Image noise_pattern(const Shape &shape, std::uint64_t seed) {
    Image img(shape);
    Rng rng = make_rng(seed, Stream::pattern);
    std::uniform_int_distribution<int> byte(0, 255);
    for (auto &v : img.data()) v = static_cast<std::uint8_t>(byte(rng));
    return img;
  }
};

/// Blends in float and snaps the result onto the uint8 grid.
inline FloatImage stamp(const FloatImage &img, const TriggerPattern &trigger) {
  trigger.validate(img.shape());
  FloatImage out(img.shape());
  const int pc = trigger.pattern.channels();
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const float w = trigger.weight.at(y, x, 0);
      for (int c = 0; c < img.channels(); ++c) {
        const float p = static_cast<float>(trigger.pattern.at(y, x, pc == 1 ? 0 : c)) / 255.0f;
        const float v = (1.0f - w) * img.at(y, x, c) + w * p;
        out.at(y, x, c) = static_cast<float>(quantize(v)) / 255.0f;
      }
    }
  return out;
}

inline ImageSample stamp_patch(const ImageSample &sample, const TriggerPattern &trigger) {
  ImageSample out = sample;
  out.pixels = to_bytes(stamp(to_float(sample.pixels), trigger));
  return out;
}

inline Transform make_stamp_transform(TriggerPattern trigger, std::string name = "PatchTrigger") {
  Transform t;
  t.name = std::move(name);
  t.apply = [trigger = std::move(trigger)](FloatImage img, Rng &) { return stamp(img, trigger); };
  return t;
}

/// Sequential composition: first, then second.
inline Transform compose(Transform first, const TransformChain &then, std::string name) {
  Transform t;
  t.name = std::move(name);
  t.params = first.params;
  t.apply = [first = std::move(first), then](FloatImage img, Rng &rng) {
    img = first.apply(std::move(img), rng);
    clamp_unit(img);
    return run_chain(then, std::move(img), rng);
  };
  return t;
}

/// floor(rate * N) source indices sampled uniformly without replacement,
/// returned sorted. With exclude_target only samples labeled != y_target are
/// eligible.
inline std::vector<std::size_t> select_poison_indices(const Dataset &data, double rate,
                                                      std::uint64_t seed,
                                                      bool exclude_target = false,
                                                      int y_target = 0) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ValidationError("poisoned_rate", "must lie in [0,1]");
  if (data.empty()) throw ValidationError("dataset", "is empty");
  const std::size_t count = static_cast<std::size_t>(std::floor(rate * static_cast<double>(data.size())));
  std::vector<std::size_t> candidates;
  candidates.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    if (!exclude_target || data.label(i) != y_target) candidates.push_back(data.sample(i).index);
  if (candidates.size() < count)
    throw ValidationError("poisoned_rate",
                          "insufficient eligible samples: need " + std::to_string(count) +
                              ", only " + std::to_string(candidates.size()) +
                              " samples are not of the target class");
  Rng rng = make_rng(seed, Stream::selection);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
    std::swap(candidates[i], candidates[pick(rng)]);
  }
  candidates.resize(count);
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

struct PoisonPlan {
  int y_target = 0;
  double poisoned_rate = 0.0;
  std::vector<std::size_t> poisoned_indices;
  std::optional<std::size_t> train_insert_index; ///< nullopt: end of chain
  std::optional<std::size_t> test_insert_index;
  bool deterministic = true;
  std::uint64_t seed = 0;
  bool exclude_target = false;

  void validate(const Dataset &train, const Dataset &test) const {
    if (y_target < 0 || y_target >= train.num_classes())
      throw ValidationError("y_target", std::to_string(y_target) + " outside [0," +
                                            std::to_string(train.num_classes()) + ")");
    if (!(poisoned_rate >= 0.0 && poisoned_rate <= 1.0))
      throw ValidationError("poisoned_rate", "must lie in [0,1]");
    const auto expected = static_cast<std::size_t>(std::floor(poisoned_rate * static_cast<double>(train.size())));
    if (poisoned_indices.size() != expected)
      throw ValidationError("poisoned_indices", "holds " + std::to_string(poisoned_indices.size()) +
                                                    " indices, floor(rate*N) = " + std::to_string(expected));
    if (!std::is_sorted(poisoned_indices.begin(), poisoned_indices.end()) ||
        std::adjacent_find(poisoned_indices.begin(), poisoned_indices.end()) != poisoned_indices.end())
      throw ValidationError("poisoned_indices", "must be sorted and unique");
    if (!poisoned_indices.empty() && poisoned_indices.back() >= train.storage_size())
      throw ValidationError("poisoned_indices", "index outside [0, N_train)");
    if (train_insert_index && *train_insert_index > train.chain().size())
      throw ValidationError("poisoned_transform_train_index",
                            std::to_string(*train_insert_index) + " exceeds chain length " +
                                std::to_string(train.chain().size()));
    if (test_insert_index && *test_insert_index > test.chain().size())
      throw ValidationError("poisoned_transform_test_index",
                            std::to_string(*test_insert_index) + " exceeds chain length " +
                                std::to_string(test.chain().size()));
  }
};

inline PoisonPlan make_plan(const Dataset &train, int y_target, double rate, std::uint64_t seed,
                            bool exclude_target = false) {
  PoisonPlan plan;
  plan.y_target = y_target;
  plan.poisoned_rate = rate;
  plan.seed = seed;
  plan.exclude_target = exclude_target;
  plan.poisoned_indices = select_poison_indices(train, rate, seed, exclude_target, y_target);
  return plan;
}

struct TriggerDescriptor {
  std::string type;
  json params = json::object();
  std::uint64_t seed = 0;

  bool operator==(const TriggerDescriptor &) const = default;
};

/// Ground truth for one poisoned build.
struct PoisonManifest {
  std::vector<std::size_t> poisoned_indices;
  int y_target = 0;
  TriggerDescriptor trigger;
  std::vector<int> original_labels; ///< parallel to poisoned_indices
  std::vector<std::size_t> test_indices;
  std::vector<int> test_original_labels;

  bool operator==(const PoisonManifest &) const = default;

  [[nodiscard]] json to_json() const {
    return {{"poisoned_indices", poisoned_indices},
            {"y_target", y_target},
            {"trigger", {{"type", trigger.type}, {"params", trigger.params}, {"seed", trigger.seed}}},
            {"original_labels", original_labels},
            {"test_indices", test_indices},
            {"test_original_labels", test_original_labels}};
  }

  static PoisonManifest from_json(const json &j) {
    PoisonManifest m;
    m.poisoned_indices = j.at("poisoned_indices").get<std::vector<std::size_t>>();
    m.y_target = j.at("y_target").get<int>();
    const auto &t = j.at("trigger");
    m.trigger = {t.at("type").get<std::string>(), t.at("params"), t.at("seed").get<std::uint64_t>()};
    m.original_labels = j.at("original_labels").get<std::vector<int>>();
    m.test_indices = j.value("test_indices", std::vector<std::size_t>{});
    m.test_original_labels = j.value("test_original_labels", std::vector<int>{});
    if (m.original_labels.size() != m.poisoned_indices.size())
      throw ValidationError("original_labels", "length differs from poisoned_indices");
    return m;
  }
};

struct PoisonedDatasets {
  Dataset train;
  Dataset test;
  PoisonManifest manifest;
};

/// Trigger applied to training and test samples; they differ only for
/// training-controlled attacks that augment the trigger during training.
struct TriggerOps {
  Transform train;
  Transform test;
};

inline PoisonedDatasets build_poisoned_dataset(const Dataset &benign_train, const Dataset &benign_test,
                                               const PoisonPlan &plan, const TriggerOps &trigger,
                                               const TriggerDescriptor &descriptor) {
  plan.validate(benign_train, benign_test);
  PoisonedDatasets out;

  auto train_overlay = std::make_shared<PoisonOverlay>();
  train_overlay->poisoned.assign(benign_train.storage_size(), false);
  for (auto i : plan.poisoned_indices) train_overlay->poisoned[i] = true;
  train_overlay->trigger = trigger.train;
  train_overlay->insert_index = plan.train_insert_index.value_or(benign_train.chain().size());
  train_overlay->y_target = plan.y_target;
  out.train = benign_train.with_overlay(std::move(train_overlay));

  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < benign_test.size(); ++i)
    if (benign_test.label(i) != plan.y_target) keep.push_back(i);
  auto test_overlay = std::make_shared<PoisonOverlay>();
  test_overlay->poisoned.assign(benign_test.storage_size(), true);
  test_overlay->trigger = trigger.test;
  test_overlay->insert_index = plan.test_insert_index.value_or(benign_test.chain().size());
  test_overlay->y_target = plan.y_target;
  out.test = benign_test.subset(keep).with_overlay(std::move(test_overlay));

  out.manifest.poisoned_indices = plan.poisoned_indices;
  out.manifest.y_target = plan.y_target;
  out.manifest.trigger = descriptor;
  for (auto i : plan.poisoned_indices) out.manifest.original_labels.push_back(benign_train.sample(i).label);
  for (std::size_t i = 0; i < out.test.size(); ++i) {
    out.manifest.test_indices.push_back(out.test.sample(i).index);
    out.manifest.test_original_labels.push_back(out.test.sample(i).label);
  }
  return out;
}

inline PoisonedDatasets build_poisoned_dataset(const Dataset &benign_train, const Dataset &benign_test,
                                               const PoisonPlan &plan, const Transform &trigger,
                                               const TriggerDescriptor &descriptor) {
  return build_poisoned_dataset(benign_train, benign_test, plan, TriggerOps{trigger, trigger}, descriptor);
}

inline void write_json(const std::filesystem::path &path, const json &j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

inline json read_json(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error &e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

/// root/{train,test}/<class>/<index>.pgm plus root/manifest.json.
inline void export_poisoned(const PoisonedDatasets &data, const std::filesystem::path &root) {
  export_folder(data.train, root / "train");
  export_folder(data.test, root / "test");
  write_json(root / "manifest.json", data.manifest.to_json());
}

} // namespace bbox
