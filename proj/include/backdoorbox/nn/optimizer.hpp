#pragma once

#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "backdoorbox/nn/model.hpp"

namespace bbox::nn {

/// SGD with momentum and L2 weight decay:
///   g = grad + wd * w;  buf = momentum * buf + g;  w -= lr * buf
class Sgd {
public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  /// Updates only parameters whose names are in `trainable`; all others stay
  /// bit-identical.
  void step(Model &model, double lr, const std::set<std::string> &trainable) {
    for (auto &ref : model.parameters()) {
      if (!trainable.contains(ref.name)) continue;
      auto &p = *ref.param;
      auto &buf = buffers_[ref.name];
      const bool fresh = buf.empty();
      if (fresh) buf.assign(p.value.size(), 0.0f);
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const float g = p.grad[i] + static_cast<float>(weight_decay_) * p.value[i];
        buf[i] = fresh ? g : static_cast<float>(momentum_) * buf[i] + g;
        p.value[i] -= static_cast<float>(lr) * buf[i];
      }
    }
  }

private:
  double momentum_;
  double weight_decay_;
  std::unordered_map<std::string, std::vector<float>> buffers_;
};

} // namespace bbox::nn
