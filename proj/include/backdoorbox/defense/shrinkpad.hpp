#pragma once

#include <span>
#include <vector>

#include "backdoorbox/dataset.hpp"
#include "backdoorbox/error.hpp"
#include "backdoorbox/nn/model.hpp"
#include "backdoorbox/rng.hpp"
#include "backdoorbox/sampling.hpp"
#include "backdoorbox/trainer.hpp"

namespace bbox {

struct ShrinkPadConfig {
  int size_map = 32;
  int pad = 4;
  std::uint64_t seed = 0;
  bool deterministic = true;

  void validate() const {
    if (size_map <= 0) throw ValidationError("size_map", "must be positive");
    if (pad < 0 || pad >= size_map)
      throw ValidationError("pad", "must lie in [0, size_map); got pad=" + std::to_string(pad) +
                                       ", size_map=" + std::to_string(size_map));
  }
};

/// Shrinks to (size_map - pad)^2 and places the result on a zero canvas at
/// the given offset (each in [0, pad]).
inline FloatImage shrinkpad_at(const FloatImage &img, const ShrinkPadConfig &cfg, int offset_y, int offset_x) {
  cfg.validate();
  if (img.height() != cfg.size_map || img.width() != cfg.size_map)
    throw ShapeError("ShrinkPad expects " + std::to_string(cfg.size_map) + "x" + std::to_string(cfg.size_map) +
                     " images, got " + img.shape().str());
  if (offset_y < 0 || offset_y > cfg.pad || offset_x < 0 || offset_x > cfg.pad)
    throw ValidationError("offset", "must lie in [0, pad]");
  const int inner = cfg.size_map - cfg.pad;
  const FloatImage small = resize_bilinear(img, inner, inner);
  FloatImage out(img.shape(), 0.0f);
  for (int y = 0; y < inner; ++y)
    for (int x = 0; x < inner; ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(y + offset_y, x + offset_x, c) = small.at(y, x, c);
  return out;
}

inline FloatImage shrinkpad(const FloatImage &img, const ShrinkPadConfig &cfg, Rng &rng) {
  const int oy = uniform_int(rng, 0, cfg.pad);
  const int ox = uniform_int(rng, 0, cfg.pad);
  return shrinkpad_at(img, cfg, oy, ox);
}

inline ImageSample shrinkpad_preprocess(const ImageSample &sample, const ShrinkPadConfig &cfg, Rng &rng) {
  ImageSample out = sample;
  out.pixels = to_bytes(shrinkpad(to_float(sample.pixels), cfg, rng));
  return out;
}

/// Test-time pre-processing defense. The model is used as a black box.
class ShrinkPad {
public:
  explicit ShrinkPad(ShrinkPadConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    if (!cfg_.deterministic) cfg_.seed = entropy_seed();
  }

  [[nodiscard]] const ShrinkPadConfig &config() const { return cfg_; }

  /// Offsets are drawn per image; the stream is keyed by the image position.
  [[nodiscard]] FloatImage preprocess(const FloatImage &img, std::size_t position = 0) const {
    Rng rng = make_rng(cfg_.seed, Stream::shrinkpad, {position});
    return shrinkpad(img, cfg_, rng);
  }

  [[nodiscard]] Preprocess as_preprocess() const {
    return [cfg = cfg_](FloatImage img, std::size_t position) {
      Rng rng = make_rng(cfg.seed, Stream::shrinkpad, {position});
      return shrinkpad(img, cfg, rng);
    };
  }

  [[nodiscard]] std::vector<int> predict(nn::Model &model, std::span<const FloatImage> images) const {
    std::vector<FloatImage> pre;
    pre.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) pre.push_back(preprocess(images[i], i));
    return nn::argmax_rows(model.forward(nn::batch_from_images(pre), false));
  }

  EvalReport test(nn::Model &model, const Dataset &data, const TestSchedule &schedule, bool write = true) const {
    return evaluate(model, data, schedule, as_preprocess(), write);
  }

private:
  ShrinkPadConfig cfg_;
};

/// argmax of the model's logits on pre-processed images.
inline std::vector<int> preprocess_predict(nn::Model &model, std::span<const FloatImage> images,
                                           const ShrinkPadConfig &cfg) {
  return ShrinkPad(cfg).predict(model, images);
}

} // namespace bbox
