#pragma once

#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "backdoorbox/error.hpp"

namespace bbox {

using json = nlohmann::json;

enum class Device { CPU, GPU };

inline Device parse_device(const std::string &s) {
  if (s == "CPU" || s == "cpu") return Device::CPU;
  if (s == "GPU" || s == "gpu") return Device::GPU;
  throw ValidationError("device", "'" + s + "' (supported: CPU, GPU)");
}

inline std::string to_string(Device d) { return d == Device::CPU ? "CPU" : "GPU"; }

namespace detail {

inline void reject_unknown_keys(const json &j, const std::set<std::string> &known, const std::string &what) {
  if (!j.is_object()) throw ValidationError(what, "must be a JSON object");
  for (const auto &[key, _] : j.items())
    if (!known.contains(key)) throw ValidationError(key, "unknown " + what + " key");
}

template <typename T> T get_or(const json &j, const char *key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception &) {
    throw ValidationError(key, "has the wrong type");
  }
}

inline void check_device_block(Device device, int gpu_num) {
  (void)device;
  if (gpu_num < 1) throw ValidationError("GPU_num", "must be 1");
  if (gpu_num > 1) throw UnsupportedError("unsupported: GPU_num=" + std::to_string(gpu_num) +
                                          " (single-device training only)");
}

} // namespace detail

/// Training configuration. JSON keys follow the usual PyTorch schedule
/// dictionary (lr, schedule, gamma, GPU_num, ...).
struct TrainSchedule {
  Device device = Device::CPU;
  std::string device_selector = "0"; ///< CUDA_VISIBLE_DEVICES
  int gpu_num = 1;
  bool benign_training = false;
  int batch_size = 128;
  int num_workers = 0;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double gamma = 0.1;
  std::vector<int> milestones; ///< key 'schedule'
  int epochs = 200;
  int log_iteration_interval = 100;
  int test_epoch_interval = 10;
  int save_epoch_interval = 20;
  std::string save_dir = "experiments";
  std::string experiment_name = "experiment";

  void validate() const {
    detail::check_device_block(device, gpu_num);
    if (batch_size <= 0) throw ValidationError("batch_size", "must be positive");
    if (num_workers < 0) throw ValidationError("num_workers", "must be nonnegative");
    if (!(lr > 0)) throw ValidationError("lr", "must be positive");
    if (!(gamma > 0 && gamma <= 1)) throw ValidationError("gamma", "must lie in (0,1]");
    if (!(momentum >= 0 && momentum < 1)) throw ValidationError("momentum", "must lie in [0,1)");
    if (!(weight_decay >= 0)) throw ValidationError("weight_decay", "must be nonnegative");
    if (epochs < 0) throw ValidationError("epochs", "must be nonnegative");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
      if (i > 0 && milestones[i] <= milestones[i - 1])
        throw ValidationError("schedule", "milestones must be strictly increasing");
      if (milestones[i] < 0 || milestones[i] >= epochs)
        throw ValidationError("schedule", "milestone " + std::to_string(milestones[i]) + " outside [0, epochs)");
    }
    if (log_iteration_interval <= 0) throw ValidationError("log_iteration_interval", "must be positive");
    if (test_epoch_interval <= 0) throw ValidationError("test_epoch_interval", "must be positive");
    if (save_epoch_interval <= 0) throw ValidationError("save_epoch_interval", "must be positive");
    if (experiment_name.empty()) throw ValidationError("experiment_name", "must not be empty");
  }

  /// lr0 * gamma^(number of milestones <= epoch); epochs count from 0.
  [[nodiscard]] double lr_at_epoch(int epoch) const {
    int passed = 0;
    for (int m : milestones)
      if (m <= epoch) ++passed;
    return lr * std::pow(gamma, passed);
  }

  [[nodiscard]] json to_json() const {
    return {{"device", to_string(device)},
            {"CUDA_VISIBLE_DEVICES", device_selector},
            {"GPU_num", gpu_num},
            {"benign_training", benign_training},
            {"batch_size", batch_size},
            {"num_workers", num_workers},
            {"lr", lr},
            {"momentum", momentum},
            {"weight_decay", weight_decay},
            {"gamma", gamma},
            {"schedule", milestones},
            {"epochs", epochs},
            {"log_iteration_interval", log_iteration_interval},
            {"test_epoch_interval", test_epoch_interval},
            {"save_epoch_interval", save_epoch_interval},
            {"save_dir", save_dir},
            {"experiment_name", experiment_name}};
  }

  static TrainSchedule from_json(const json &j) {
    static const std::set<std::string> keys{
        "device", "CUDA_VISIBLE_DEVICES", "GPU_num", "benign_training", "batch_size", "num_workers",
        "lr", "momentum", "weight_decay", "gamma", "schedule", "epochs", "log_iteration_interval",
        "test_epoch_interval", "save_epoch_interval", "save_dir", "experiment_name"};
    detail::reject_unknown_keys(j, keys, "schedule");
    TrainSchedule s;
    s.device = parse_device(detail::get_or<std::string>(j, "device", "CPU"));
    s.device_selector = detail::get_or<std::string>(j, "CUDA_VISIBLE_DEVICES", s.device_selector);
    s.gpu_num = detail::get_or(j, "GPU_num", s.gpu_num);
    s.benign_training = detail::get_or(j, "benign_training", s.benign_training);
    s.batch_size = detail::get_or(j, "batch_size", s.batch_size);
    s.num_workers = detail::get_or(j, "num_workers", s.num_workers);
    s.lr = detail::get_or(j, "lr", s.lr);
    s.momentum = detail::get_or(j, "momentum", s.momentum);
    s.weight_decay = detail::get_or(j, "weight_decay", s.weight_decay);
    s.gamma = detail::get_or(j, "gamma", s.gamma);
    s.milestones = detail::get_or(j, "schedule", s.milestones);
    s.epochs = detail::get_or(j, "epochs", s.epochs);
    s.log_iteration_interval = detail::get_or(j, "log_iteration_interval", s.log_iteration_interval);
    s.test_epoch_interval = detail::get_or(j, "test_epoch_interval", s.test_epoch_interval);
    s.save_epoch_interval = detail::get_or(j, "save_epoch_interval", s.save_epoch_interval);
    s.save_dir = detail::get_or(j, "save_dir", s.save_dir);
    s.experiment_name = detail::get_or(j, "experiment_name", s.experiment_name);
    s.validate();
    return s;
  }
};

/// Evaluation configuration (the 'test schedule' dictionaries).
struct TestSchedule {
  Device device = Device::CPU;
  std::string device_selector = "0";
  int gpu_num = 1;
  int batch_size = 128;
  int num_workers = 0;
  std::string metric = "BA";
  std::optional<int> y_target;
  std::string save_dir = "experiments";
  std::string experiment_name = "test";

  void validate() const {
    detail::check_device_block(device, gpu_num);
    if (batch_size <= 0) throw ValidationError("batch_size", "must be positive");
    if (num_workers < 0) throw ValidationError("num_workers", "must be nonnegative");
    if (experiment_name.empty()) throw ValidationError("experiment_name", "must not be empty");
  }

  [[nodiscard]] json to_json() const {
    json j{{"device", to_string(device)}, {"CUDA_VISIBLE_DEVICES", device_selector},
           {"GPU_num", gpu_num},         {"batch_size", batch_size},
           {"num_workers", num_workers}, {"metric", metric},
           {"save_dir", save_dir},       {"experiment_name", experiment_name}};
    if (y_target) j["y_target"] = *y_target;
    return j;
  }

  static TestSchedule from_json(const json &j) {
    static const std::set<std::string> keys{"device", "CUDA_VISIBLE_DEVICES", "GPU_num", "batch_size",
                                            "num_workers", "metric", "y_target", "save_dir",
                                            "experiment_name"};
    detail::reject_unknown_keys(j, keys, "test schedule");
    TestSchedule s;
    s.device = parse_device(detail::get_or<std::string>(j, "device", "CPU"));
    s.device_selector = detail::get_or<std::string>(j, "CUDA_VISIBLE_DEVICES", s.device_selector);
    s.gpu_num = detail::get_or(j, "GPU_num", s.gpu_num);
    s.batch_size = detail::get_or(j, "batch_size", s.batch_size);
    s.num_workers = detail::get_or(j, "num_workers", s.num_workers);
    s.metric = detail::get_or<std::string>(j, "metric", s.metric);
    if (j.contains("y_target")) s.y_target = detail::get_or(j, "y_target", 0);
    s.save_dir = detail::get_or(j, "save_dir", s.save_dir);
    s.experiment_name = detail::get_or(j, "experiment_name", s.experiment_name);
    s.validate();
    return s;
  }
};

} // namespace bbox
