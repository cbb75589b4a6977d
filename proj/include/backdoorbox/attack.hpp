#pragma once

#include <optional>
#include <string>
#include <utility>

#include <json.hpp>

#include "backdoorbox/dataset.hpp"
#include "backdoorbox/error.hpp"
#include "backdoorbox/nn/model.hpp"
#include "backdoorbox/poison.hpp"
#include "backdoorbox/trainer.hpp"
#include "backdoorbox/transforms.hpp"
#include "backdoorbox/warp.hpp"

namespace bbox {

/// BadNets, Blended and WaNet only poison data; PhysicalBA also controls
/// training (its trigger is re-augmented every epoch).
enum class AttackKind { BadNets, Blended, WaNet, PhysicalBA };

inline std::string to_string(AttackKind k) {
  switch (k) {
  case AttackKind::BadNets: return "BadNets";
  case AttackKind::Blended: return "Blended";
  case AttackKind::WaNet: return "WaNet";
  default: return "PhysicalBA";
  }
}

inline AttackKind parse_attack_kind(const std::string &s) {
  for (auto k : {AttackKind::BadNets, AttackKind::Blended, AttackKind::WaNet, AttackKind::PhysicalBA})
    if (to_string(k) == s) return k;
  throw ValidationError("kind", "unsupported attack '" + s + "' (supported: BadNets, Blended, WaNet, PhysicalBA)");
}

inline bool is_training_controlled(AttackKind k) { return k == AttackKind::PhysicalBA; }

struct AttackConfig {
  AttackKind kind = AttackKind::BadNets;
  int y_target = 1;
  double poisoned_rate = 0.05;
  bool deterministic = true;
  std::uint64_t seed = 0;
  bool exclude_target = false;
  std::optional<std::size_t> train_insert_index;
  std::optional<std::size_t> test_insert_index;
  Loss loss = Loss::CrossEntropy;

  /// Explicit pattern/weight; when absent BadNets/PhysicalBA use a corner
  /// patch and Blended a seeded noise image.
  std::optional<TriggerPattern> pattern;
  int patch_size = 3;
  int patch_value = 255;
  double blend_alpha = 0.1;
  int warp_grid_size = 4;
  double warp_strength = 0.5;
  Interpolation warp_interpolation = Interpolation::bilinear;
  PhysicalAugmentation physical = PhysicalAugmentation::standard();

  /// Trigger parameters as they appear in experiment configs.
  [[nodiscard]] json trigger_params() const {
    json p = json::object();
    switch (kind) {
    case AttackKind::BadNets:
    case AttackKind::PhysicalBA:
      if (pattern) p["pattern"] = "custom";
      else p = {{"patch_size", patch_size}, {"value", patch_value}};
      if (kind == AttackKind::PhysicalBA) p["physical_transformations"] = physical.to_json();
      break;
    case AttackKind::Blended:
      if (pattern) p["pattern"] = "custom";
      else p = {{"pattern", "noise"}, {"alpha", blend_alpha}};
      break;
    case AttackKind::WaNet:
      p = {{"grid_size", warp_grid_size},
           {"strength", warp_strength},
           {"interpolation", warp_interpolation == Interpolation::bilinear ? "bilinear" : "nearest"}};
      break;
    }
    return p;
  }

  [[nodiscard]] json to_json() const {
    json j{{"kind", to_string(kind)},
           {"y_target", y_target},
           {"poisoned_rate", poisoned_rate},
           {"exclude_target", exclude_target},
           {"loss", "CrossEntropy"},
           {"trigger", trigger_params()}};
    if (train_insert_index) j["poisoned_transform_train_index"] = *train_insert_index;
    if (test_insert_index) j["poisoned_transform_test_index"] = *test_insert_index;
    return j;
  }

  static AttackConfig from_json(const json &j) {
    static const std::set<std::string> keys{"kind", "y_target", "poisoned_rate", "exclude_target", "loss",
                                            "trigger", "poisoned_transform_train_index",
                                            "poisoned_transform_test_index"};
    detail::reject_unknown_keys(j, keys, "attack");
    AttackConfig c;
    c.kind = parse_attack_kind(j.at("kind").get<std::string>());
    c.y_target = detail::get_or(j, "y_target", c.y_target);
    c.poisoned_rate = detail::get_or(j, "poisoned_rate", c.poisoned_rate);
    c.exclude_target = detail::get_or(j, "exclude_target", c.exclude_target);
    c.loss = parse_loss(detail::get_or<std::string>(j, "loss", "CrossEntropy"));
    if (j.contains("poisoned_transform_train_index"))
      c.train_insert_index = j["poisoned_transform_train_index"].get<std::size_t>();
    if (j.contains("poisoned_transform_test_index"))
      c.test_insert_index = j["poisoned_transform_test_index"].get<std::size_t>();
    const json t = j.value("trigger", json::object());
    detail::reject_unknown_keys(t, {"patch_size", "value", "alpha", "grid_size", "strength", "interpolation",
                                    "physical_transformations", "pattern"},
                                "trigger");
    if (t.contains("pattern") && t["pattern"] != "noise")
      throw ValidationError("pattern", "only \"noise\" can be given in a config; custom patterns are set in code");
    c.patch_size = detail::get_or(t, "patch_size", c.patch_size);
    c.patch_value = detail::get_or(t, "value", c.patch_value);
    c.blend_alpha = detail::get_or(t, "alpha", c.blend_alpha);
    c.warp_grid_size = detail::get_or(t, "grid_size", c.warp_grid_size);
    c.warp_strength = detail::get_or(t, "strength", c.warp_strength);
    c.warp_interpolation = parse_interpolation(detail::get_or<std::string>(t, "interpolation", "bilinear"));
    if (t.contains("physical_transformations"))
      c.physical = PhysicalAugmentation::from_json(t["physical_transformations"]);
    if (c.patch_value < 0 || c.patch_value > 255) throw ValidationError("value", "must lie in [0,255]");
    if (!(c.blend_alpha >= 0 && c.blend_alpha <= 1)) throw ValidationError("alpha", "must lie in [0,1]");
    return c;
  }
};

/// One attack: poisoned data construction, training, and model access, with
/// the call-order rules of the attack kind enforced.
class AttackSession {
public:
  enum class State { initialized, trained };

  AttackSession(AttackConfig config, Dataset benign_train, Dataset benign_test, nn::Model model)
      : config_(std::move(config)), benign_train_(std::move(benign_train)), benign_test_(std::move(benign_test)),
        model_(std::move(model)) {
    seeding_ = config_.deterministic ? set_deterministic(config_.seed) : fresh_seeding();
    check();
    benign_train_.set_seed(derive_seed(seeding_.seed, Stream::sample, {0}));
    benign_test_.set_seed(derive_seed(seeding_.seed, Stream::sample, {1}));

    plan_ = make_plan(benign_train_, config_.y_target, config_.poisoned_rate, seeding_.seed, config_.exclude_target);
    plan_.train_insert_index = config_.train_insert_index;
    plan_.test_insert_index = config_.test_insert_index;
    plan_.deterministic = seeding_.deterministic;

    descriptor_ = {to_string(config_.kind), config_.trigger_params(), seeding_.seed};
    poisoned_ = build_poisoned_dataset(benign_train_, benign_test_, plan_, make_trigger_ops(), descriptor_);
  }

  [[nodiscard]] State state() const { return state_; }
  [[nodiscard]] const AttackConfig &config() const { return config_; }
  [[nodiscard]] const PoisonPlan &plan() const { return plan_; }
  [[nodiscard]] const Seeding &seeding() const { return seeding_; }
  [[nodiscard]] const RunLog &run_log() const { return log_; }
  [[nodiscard]] const Dataset &benign_train() const { return benign_train_; }
  [[nodiscard]] const Dataset &benign_test() const { return benign_test_; }

  /// Poison-only kinds: available right after construction. Training-
  /// controlled kinds: only after train().
  [[nodiscard]] std::pair<Dataset, Dataset> get_poisoned_dataset() const {
    require_poisoned_access();
    return {poisoned_.train, poisoned_.test};
  }

  [[nodiscard]] const PoisonManifest &manifest() const {
    require_poisoned_access();
    return poisoned_.manifest;
  }

  void train(const TrainSchedule &schedule, TrainOptions options = {}) {
    schedule.validate();
    options.seeding = seeding_;
    options.loss = config_.loss;
    const Dataset poisoned_test = poisoned_.test;
    const Dataset benign_test = benign_test_;
    const int y_target = config_.y_target;
    options.periodic_tests.push_back({"BA", [benign_test](nn::Model &m) {
                                        return benign_accuracy(m, benign_test).value;
                                      }});
    options.periodic_tests.push_back({"ASR_NoTarget", [poisoned_test, y_target](nn::Model &m) {
                                        return attack_success_rate(m, poisoned_test, y_target, AsrMode::NoTarget).value;
                                      }});
    const Dataset &data = schedule.benign_training ? benign_train_ : poisoned_.train;
    log_ = bbox::train(model_, data, schedule, options);
    state_ = State::trained;
  }

  /// Snapshot of the trained model; later training does not affect it.
  [[nodiscard]] nn::Model get_model() const {
    if (state_ != State::trained) throw StateError("get_model called before train");
    return model_;
  }

  /// Replaces the model with an already-trained one (e.g. a checkpoint).
  void adopt_trained_model(nn::Model model) {
    check_model(model);
    model_ = std::move(model);
    state_ = State::trained;
  }

private:
  void require_poisoned_access() const {
    if (is_training_controlled(config_.kind) && state_ != State::trained)
      throw StateError("get_poisoned_dataset for " + to_string(config_.kind) +
                       " is only valid after train (poisoned samples change during training)");
  }

  void check_model(const nn::Model &model) const {
    const Shape s = benign_train_.shape();
    const auto &spec = model.spec();
    if (spec.height != s.height || spec.width != s.width || spec.in_channels != s.channels)
      throw UnsupportedError("check failed: model expects " + std::to_string(spec.height) + "x" +
                             std::to_string(spec.width) + "x" + std::to_string(spec.in_channels) +
                             " inputs, dataset images are " + s.str());
    if (spec.num_classes != benign_train_.num_classes())
      throw UnsupportedError("check failed: model has " + std::to_string(spec.num_classes) +
                             " classes, dataset has " + std::to_string(benign_train_.num_classes()));
  }

  void check() const {
    if (benign_train_.empty()) throw UnsupportedError("check failed: training dataset is empty");
    if (benign_test_.empty()) throw UnsupportedError("check failed: testing dataset is empty");
    if (benign_train_.shape() != benign_test_.shape())
      throw UnsupportedError("check failed: train images are " + benign_train_.shape().str() +
                             ", test images are " + benign_test_.shape().str());
    if (benign_train_.num_classes() != benign_test_.num_classes())
      throw UnsupportedError("check failed: train and test splits disagree on the number of classes");
    if (config_.y_target < 0 || config_.y_target >= benign_train_.num_classes())
      throw UnsupportedError("check failed: y_target " + std::to_string(config_.y_target) + " is not a class");
    check_model(model_);
    if (config_.pattern) config_.pattern->validate(benign_train_.shape());
  }

  [[nodiscard]] TriggerPattern pattern() const {
    if (config_.pattern) return *config_.pattern;
    const Shape s = benign_train_.shape();
    if (config_.kind == AttackKind::Blended)
      return TriggerPattern::blended(TriggerPattern::noise_pattern(s, seeding_.seed),
                                     static_cast<float>(config_.blend_alpha));
    return TriggerPattern::corner_patch(s, config_.patch_size, static_cast<std::uint8_t>(config_.patch_value));
  }

  [[nodiscard]] TriggerOps make_trigger_ops() const {
    const Shape s = benign_train_.shape();
    switch (config_.kind) {
    case AttackKind::BadNets:
    case AttackKind::Blended: {
      Transform t = make_stamp_transform(pattern(), to_string(config_.kind) + "Trigger");
      return {t, t};
    }
    case AttackKind::WaNet: {
      Transform t = make_warp_transform(
          build_warp_field(config_.warp_grid_size, config_.warp_strength, s.height, s.width, seeding_.seed),
          config_.warp_interpolation);
      return {t, t};
    }
    default: {
      config_.physical.validate();
      Transform stamp_only = make_stamp_transform(pattern(), "PhysicalBATrigger");
      return {compose(stamp_only, config_.physical.chain(), "PhysicalBATrainTrigger"), stamp_only};
    }
    }
  }

  AttackConfig config_;
  Dataset benign_train_;
  Dataset benign_test_;
  nn::Model model_;
  Seeding seeding_;
  PoisonPlan plan_;
  TriggerDescriptor descriptor_;
  PoisonedDatasets poisoned_;
  RunLog log_;
  State state_ = State::initialized;
};

} // namespace bbox
