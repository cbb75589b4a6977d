#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "backdoorbox/dataset.hpp"
#include "backdoorbox/error.hpp"
#include "backdoorbox/nn/model.hpp"
#include "backdoorbox/rng.hpp"
#include "backdoorbox/trainer.hpp"

namespace bbox {

struct CutMixConfig {
  double beta = 1.0;
  double cutmix_prob = 1.0;

  void validate() const {
    if (!(beta > 0)) throw ValidationError("beta", "must be positive");
    if (!(cutmix_prob >= 0 && cutmix_prob <= 1)) throw ValidationError("cutmix_prob", "must lie in [0,1]");
  }
};

/// Half-open box [y1, y2) x [x1, x2) and the label weight implied by its
/// clipped area.
struct Box {
  int y1 = 0, x1 = 0, y2 = 0, x2 = 0;
  double lambda_adj = 1.0;

  [[nodiscard]] int area() const { return (y2 - y1) * (x2 - x1); }
  [[nodiscard]] bool contains(int y, int x) const { return y >= y1 && y < y2 && x >= x1 && x < x2; }
};

/// Box with side ratio sqrt(1 - lambda) per dimension centered at (cy, cx),
/// clipped to the image.
inline Box box_at(int height, int width, double lambda, int cy, int cx) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("lambda", "must lie in [0,1]");
  const double cut = std::sqrt(1.0 - lambda);
  const int cut_h = static_cast<int>(height * cut);
  const int cut_w = static_cast<int>(width * cut);
  Box b;
  b.y1 = std::clamp(cy - cut_h / 2, 0, height);
  b.y2 = std::clamp(cy + cut_h / 2, 0, height);
  b.x1 = std::clamp(cx - cut_w / 2, 0, width);
  b.x2 = std::clamp(cx + cut_w / 2, 0, width);
  b.lambda_adj = 1.0 - static_cast<double>(b.area()) / (static_cast<double>(height) * width);
  return b;
}

inline Box rand_bbox(int height, int width, double lambda, Rng &rng) {
  const int cy = uniform_int(rng, 0, height - 1);
  const int cx = uniform_int(rng, 0, width - 1);
  return box_at(height, width, lambda, cy, cx);
}

/// Pastes `box` of `partner` into `target` (same shape, one sample each).
inline void paste_box(std::span<float> target, std::span<const float> partner, int channels, int height, int width,
                      const Box &box) {
  for (int c = 0; c < channels; ++c)
    for (int y = box.y1; y < box.y2; ++y)
      for (int x = box.x1; x < box.x2; ++x) {
        const std::size_t i = (static_cast<std::size_t>(c) * height + y) * width + x;
        target[i] = partner[i];
      }
}

struct CutMixDraw {
  bool applied = false;
  double lambda = 1.0;
  Box box;
  std::vector<int> permutation;
};

/// With probability cutmix_prob: lambda ~ Beta(beta, beta), a random box of
/// a shuffled partner batch replaces the same region of every sample.
inline CutMixDraw cutmix_batch(nn::Tensor &batch, const CutMixConfig &cfg, Rng &rng) {
  cfg.validate();
  CutMixDraw d;
  if (batch.n() == 0 || uniform_real(rng, 0.0, 1.0) >= cfg.cutmix_prob) return d;
  d.applied = true;
  d.lambda = sample_beta(cfg.beta, cfg.beta, rng);
  d.permutation.resize(batch.n());
  std::iota(d.permutation.begin(), d.permutation.end(), 0);
  std::shuffle(d.permutation.begin(), d.permutation.end(), rng);
  d.box = rand_bbox(batch.h(), batch.w(), d.lambda, rng);
  const nn::Tensor source = batch;
  for (int n = 0; n < batch.n(); ++n)
    paste_box(batch.sample(n), source.sample(d.permutation[n]), batch.c(), batch.h(), batch.w(), d.box);
  return d;
}

inline BatchMixer make_cutmix_mixer(CutMixConfig cfg) {
  cfg.validate();
  return [cfg](nn::Tensor &batch, std::span<const int> labels, Rng &rng) {
    const CutMixDraw d = cutmix_batch(batch, cfg, rng);
    MixedTargets t{{labels.begin(), labels.end()}, {}, 1.0};
    if (!d.applied) return t;
    for (int p : d.permutation) t.partner.push_back(labels[p]);
    t.primary_weight = d.box.lambda_adj;
    return t;
  };
}

/// Trains `model` from its current (fresh) weights on a possibly poisoned
/// set with CutMix applied per batch.
inline nn::Model cutmix_train(nn::Model model, const Dataset &suspicious, const CutMixConfig &cfg,
                              const TrainSchedule &schedule, TrainOptions options = {}, RunLog *log = nullptr) {
  options.mixer = make_cutmix_mixer(cfg);
  RunLog run = train(model, suspicious, schedule, options);
  if (log) *log = std::move(run);
  return model;
}

} // namespace bbox
