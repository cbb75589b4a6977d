#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "backdoorbox/error.hpp"
#include "backdoorbox/nn/layers.hpp"
#include "backdoorbox/nn/tensor.hpp"
#include "backdoorbox/rng.hpp"

namespace bbox::nn {

using json = nlohmann::json;

/// Architecture descriptor. `base_width` scales channel counts (0 = the
/// architecture's default).
struct ModelSpec {
  std::string architecture = "small-cnn";
  int in_channels = 1;
  int height = 28;
  int width = 28;
  int num_classes = 10;
  int base_width = 0;

  bool operator==(const ModelSpec &) const = default;

  [[nodiscard]] json to_json() const {
    return {{"architecture", architecture}, {"in_channels", in_channels}, {"height", height},
            {"width", width},               {"num_classes", num_classes}, {"base_width", base_width}};
  }

  static ModelSpec from_json(const json &j) {
    ModelSpec s;
    s.architecture = j.value("architecture", s.architecture);
    s.in_channels = j.value("in_channels", s.in_channels);
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.num_classes = j.value("num_classes", s.num_classes);
    s.base_width = j.value("base_width", s.base_width);
    return s;
  }
};

inline const std::vector<std::string> &supported_architectures() {
  static const std::vector<std::string> names{"small-cnn", "resnet-18"};
  return names;
}

/// Sequence of named layers producing K logits per sample, with optional
/// per-channel output masks and per-layer trainability.
class Model {
public:
  Model() = default;

  Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    if (spec_.num_classes <= 0 || spec_.in_channels <= 0 || spec_.height <= 0 || spec_.width <= 0)
      throw ValidationError("model", "dimensions must be positive");
    if (spec_.architecture == "small-cnn")
      build_small_cnn();
    else if (spec_.architecture == "resnet-18")
      build_resnet18();
    else
      throw UnsupportedError("unknown architecture '" + spec_.architecture +
                             "' (supported: small-cnn, resnet-18)");
    trainable_.assign(layers_.size(), true);
    Rng rng = make_rng(seed, Stream::init);
    for (auto &l : layers_) l.layer->reset(rng);
  }

  Model(const Model &other)
      : spec_(other.spec_), trainable_(other.trainable_), masks_(other.masks_) {
    for (const auto &l : other.layers_) layers_.push_back({l.name, l.layer->clone()});
  }
  Model &operator=(const Model &other) {
    if (this != &other) {
      Model copy(other);
      *this = std::move(copy);
    }
    return *this;
  }
  Model(Model &&) noexcept = default;
  Model &operator=(Model &&) noexcept = default;

  [[nodiscard]] const ModelSpec &spec() const { return spec_; }

  [[nodiscard]] std::vector<std::string> layer_names() const {
    std::vector<std::string> out;
    for (const auto &l : layers_) out.push_back(l.name);
    return out;
  }

  [[nodiscard]] bool has_layer(std::string_view name) const { return find(name) != layers_.size(); }

  /// Name of the layer whose output feeds the final classifier.
  [[nodiscard]] std::string penultimate_layer() const { return layers_.at(layers_.size() - 2).name; }

  Tensor forward(const Tensor &x, bool training = false) {
    Tensor h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i].layer->forward(h, training);
      apply_mask(layers_[i].name, h);
    }
    return h;
  }

  /// Eval-mode output of `layer` with masks applied. Each sample's values
  /// form one feature vector.
  Tensor features(const Tensor &x, std::string_view layer) {
    const std::size_t stop = require_layer(layer);
    Tensor h = x;
    for (std::size_t i = 0; i <= stop; ++i) {
      h = layers_[i].layer->forward(h, false);
      apply_mask(layers_[i].name, h);
    }
    return h;
  }

  /// Eval-mode activation of `layer` keeping its spatial layout.
  Tensor activation(const Tensor &x, std::string_view layer) { return features(x, layer); }

  void backward(const Tensor &grad_logits) {
    Tensor g = grad_logits;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      apply_mask(layers_[i].name, g);
      g = layers_[i].layer->backward(g);
    }
  }

  /// Trainable parameters and frozen ones alike, excluding buffers.
  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> out;
    for (auto &r : state())
      if (!r.buffer) out.push_back(r);
    return out;
  }

  /// Parameters plus buffers in a stable order.
  std::vector<ParamRef> state() {
    std::vector<ParamRef> out;
    for (auto &l : layers_) l.layer->collect(l.name, out);
    return out;
  }

  [[nodiscard]] std::vector<ParamRef> state() const { return const_cast<Model *>(this)->state(); }

  void zero_grad() {
    for (auto &r : state()) std::fill(r.param->grad.begin(), r.param->grad.end(), 0.0f);
  }

  /// Restricts training to the named layers; "full layers" selects all.
  void set_trainable(const std::vector<std::string> &names) {
    std::vector<bool> next(layers_.size(), false);
    if (std::find(names.begin(), names.end(), "full layers") != names.end())
      next.assign(layers_.size(), true);
    else
      for (const auto &n : names) next[require_layer(n)] = true;
    trainable_ = std::move(next);
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].layer->set_frozen(!trainable_[i]);
  }

  [[nodiscard]] bool layer_trainable(std::string_view name) const { return trainable_[require_layer(name)]; }

  /// Parameter names belonging to trainable layers.
  [[nodiscard]] std::set<std::string> trainable_parameters() const {
    std::set<std::string> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (!trainable_[i]) continue;
      std::vector<ParamRef> refs;
      layers_[i].layer->collect(layers_[i].name, refs);
      for (const auto &r : refs)
        if (!r.buffer) out.insert(r.name);
    }
    return out;
  }

  /// Multiplies channel c of the layer's output by mask[c].
  void set_channel_mask(const std::string &layer, std::vector<float> mask) {
    require_layer(layer);
    masks_[layer] = std::move(mask);
  }
  [[nodiscard]] const std::map<std::string, std::vector<float>> &channel_masks() const { return masks_; }
  void clear_channel_masks() { masks_.clear(); }

  [[nodiscard]] bool same_state(const Model &other) const {
    if (!(spec_ == other.spec_) || masks_ != other.masks_) return false;
    const auto a = state(), b = other.state();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].name != b[i].name || a[i].param->value != b[i].param->value) return false;
    return true;
  }

  std::size_t require_layer(std::string_view name) const {
    const std::size_t i = find(name);
    if (i == layers_.size()) {
      std::string known;
      for (const auto &l : layers_) known += (known.empty() ? "" : ", ") + l.name;
      throw ValidationError("layer", "unknown layer '" + std::string(name) + "' (model layers: " + known + ")");
    }
    return i;
  }

private:
  struct Named {
    std::string name;
    std::unique_ptr<Layer> layer;
  };

  [[nodiscard]] std::size_t find(std::string_view name) const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (layers_[i].name == name) return i;
    return layers_.size();
  }

  void apply_mask(const std::string &name, Tensor &t) const {
    const auto it = masks_.find(name);
    if (it == masks_.end()) return;
    const auto &mask = it->second;
    if (static_cast<int>(mask.size()) != t.c())
      throw ShapeError("mask for '" + name + "' has " + std::to_string(mask.size()) +
                       " channels, layer output has " + std::to_string(t.c()));
    const std::size_t plane = t.plane();
    for (int n = 0; n < t.n(); ++n)
      for (int c = 0; c < t.c(); ++c) {
        if (mask[c] == 1.0f) continue;
        float *p = t.data.data() + (static_cast<std::size_t>(n) * t.c() + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] *= mask[c];
      }
  }

  template <typename L, typename... Args> void add(std::string name, Args &&...args) {
    layers_.push_back({std::move(name), std::make_unique<L>(std::forward<Args>(args)...)});
  }

  // conv(3x3) - relu - pool - conv(3x3) - relu - pool - dense - relu - dense
  void build_small_cnn() {
    const int w = spec_.base_width > 0 ? spec_.base_width : 16;
    add<Conv2d>("conv1", spec_.in_channels, w, 3, 1, 1);
    add<ReLU>("relu1");
    add<MaxPool2d>("pool1", 2);
    add<Conv2d>("conv2", w, 2 * w, 3, 1, 1);
    add<ReLU>("relu2");
    add<MaxPool2d>("pool2", 2);
    add<Flatten>("flatten");
    const int flat = 2 * w * (spec_.height / 4) * (spec_.width / 4);
    if (flat <= 0) throw ValidationError("model", "input too small for small-cnn");
    add<Linear>("fc1", flat, 8 * w);
    add<ReLU>("relu3");
    add<Linear>("classifier", 8 * w, spec_.num_classes);
  }

  // CIFAR-style ResNet-18: 3x3 stem, four stages of two basic blocks.
  void build_resnet18() {
    const int w = spec_.base_width > 0 ? spec_.base_width : 64;
    add<Conv2d>("conv1", spec_.in_channels, w, 3, 1, 1, false);
    add<BatchNorm2d>("bn1", w);
    add<ReLU>("relu");
    int in = w;
    for (int stage = 0; stage < 4; ++stage) {
      const int out = w << stage;
      for (int b = 0; b < 2; ++b) {
        add<BasicBlock>("layer" + std::to_string(stage + 1) + "." + std::to_string(b), in, out,
                        (b == 0 && stage > 0) ? 2 : 1);
        in = out;
      }
    }
    add<GlobalAvgPool>("avgpool");
    add<Flatten>("flatten");
    add<Linear>("linear", in, spec_.num_classes);
  }

  ModelSpec spec_;
  std::vector<Named> layers_;
  std::vector<bool> trainable_;
  std::map<std::string, std::vector<float>> masks_;
};

/// Mean softmax cross-entropy. When grad is given, adds
/// weight * d(loss)/d(logits) into it (allocating zeros on size mismatch).
inline double cross_entropy(const Tensor &logits, std::span<const int> labels, Tensor *grad = nullptr,
                            double weight = 1.0) {
  const int N = logits.n(), K = logits.c();
  if (static_cast<int>(labels.size()) != N) throw ShapeError("label count differs from batch size");
  if (grad && grad->size() != logits.size()) *grad = Tensor(N, K, 1, 1);
  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    const float *z = logits.data.data() + static_cast<std::size_t>(n) * K;
    const float zmax = *std::max_element(z, z + K);
    double denom = 0.0;
    for (int k = 0; k < K; ++k) denom += std::exp(static_cast<double>(z[k] - zmax));
    const int y = labels[n];
    if (y < 0 || y >= K) throw ValidationError("label", "outside [0,K)");
    total += std::log(denom) - (z[y] - zmax);
    if (grad) {
      float *g = grad->data.data() + static_cast<std::size_t>(n) * K;
      for (int k = 0; k < K; ++k) {
        const double p = std::exp(static_cast<double>(z[k] - zmax)) / denom;
        g[k] += static_cast<float>(weight * (p - (k == y ? 1.0 : 0.0)) / N);
      }
    }
  }
  return total / N;
}

inline std::vector<int> argmax_rows(const Tensor &logits) {
  std::vector<int> out(logits.n());
  const int K = logits.c();
  for (int n = 0; n < logits.n(); ++n) {
    const float *z = logits.data.data() + static_cast<std::size_t>(n) * K;
    out[n] = static_cast<int>(std::max_element(z, z + K) - z);
  }
  return out;
}

} // namespace bbox::nn
