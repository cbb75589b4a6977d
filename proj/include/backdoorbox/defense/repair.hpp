#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "backdoorbox/dataset.hpp"
#include "backdoorbox/error.hpp"
#include "backdoorbox/nn/model.hpp"
#include "backdoorbox/trainer.hpp"

namespace bbox {

struct RepairConfig {
  std::vector<std::string> layers{"full layers"};
  TrainSchedule schedule;
};

/// Continues training on clean local data with only `config.layers`
/// trainable. Parameters of all other layers stay bit-identical.
inline nn::Model finetune_repair(nn::Model model, const Dataset &benign, const RepairConfig &config,
                                 TrainOptions options = {}, RunLog *log = nullptr) {
  if (config.layers.empty()) throw ValidationError("layer", "at least one layer (or \"full layers\") is required");
  model.set_trainable(config.layers);
  RunLog run = train(model, benign, config.schedule, options);
  model.set_trainable({"full layers"});
  if (log) *log = std::move(run);
  return model;
}

/// Mean activation per channel of `layer` over the dataset (masks already on
/// the model are respected).
inline std::vector<double> mean_channel_activation(nn::Model &model, const Dataset &data, const std::string &layer,
                                                   int batch_size = 128) {
  model.require_layer(layer);
  std::vector<double> sums;
  double count = 0.0;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(batch_size));
    const Batch b = load_batch(data, std::span(order).subspan(begin, end - begin), 0);
    const nn::Tensor act = model.activation(b.inputs, layer);
    if (sums.empty()) sums.assign(act.c(), 0.0);
    const std::size_t plane = act.plane();
    for (int n = 0; n < act.n(); ++n)
      for (int c = 0; c < act.c(); ++c) {
        const float *p = act.data.data() + (static_cast<std::size_t>(n) * act.c() + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sums[c] += p[i];
      }
    count += static_cast<double>(act.n()) * plane;
  }
  for (auto &s : sums) s = count > 0 ? s / count : 0.0;
  return sums;
}

/// The ceil(f * C) channels with the smallest mean activation (ties broken
/// by channel index), so larger fractions prune supersets.
inline std::vector<int> channels_to_prune(std::span<const double> means, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ValidationError("prune_fraction", "must lie in [0,1]");
  const auto channels = static_cast<double>(means.size());
  // Guard against products like 0.1 * 30 = 3.0000000000000004.
  const auto count = static_cast<std::size_t>(std::ceil(fraction * channels - 1e-9));
  std::vector<int> order(means.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return means[a] < means[b]; });
  order.resize(std::min(count, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

/// Zeroes the least-active channels of `layer` measured on benign data.
inline nn::Model prune_repair(nn::Model model, const Dataset &benign, const std::string &layer, double fraction,
                              int batch_size = 128, std::vector<int> *pruned = nullptr) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ValidationError("prune_fraction", "must lie in [0,1]");
  const auto means = mean_channel_activation(model, benign, layer, batch_size);
  const auto chosen = channels_to_prune(means, fraction);
  std::vector<float> mask(means.size(), 1.0f);
  if (const auto it = model.channel_masks().find(layer); it != model.channel_masks().end()) mask = it->second;
  for (int c : chosen) mask[c] = 0.0f;
  if (!chosen.empty()) model.set_channel_mask(layer, std::move(mask));
  if (pruned) *pruned = chosen;
  return model;
}

} // namespace bbox
