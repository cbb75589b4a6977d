#pragma once

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "backdoorbox/dataset.hpp"
#include "backdoorbox/metrics.hpp"
#include "backdoorbox/nn/checkpoint.hpp"
#include "backdoorbox/nn/model.hpp"
#include "backdoorbox/nn/optimizer.hpp"
#include "backdoorbox/poison.hpp"
#include "backdoorbox/rng.hpp"
#include "backdoorbox/schedule.hpp"

namespace bbox {

/// Root seed plus whether it was fixed by the caller.
struct Seeding {
  std::uint64_t seed = 0;
  bool deterministic = true;
};

/// Fixes the seed every randomness source derives from (poison selection,
/// augmentation draws, weight init, shuffling) and pins linear algebra to a
/// single thread so reductions run in a fixed order.
inline Seeding set_deterministic(std::uint64_t seed) {
  Eigen::setNbThreads(1);
  return {seed, true};
}

inline Seeding fresh_seeding() { return {entropy_seed(), false}; }

enum class Loss { CrossEntropy };

inline Loss parse_loss(const std::string &s) {
  if (s == "CrossEntropy" || s == "CrossEntropyLoss" || s == "cross_entropy") return Loss::CrossEntropy;
  throw ValidationError("loss", "'" + s + "' (supported: CrossEntropy)");
}

struct LogRecord {
  std::size_t iteration = 0;
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::string timestamp;
};

struct TestRecord {
  int epoch = 0;
  std::string metric;
  double value = 0.0;
};

/// Append-only record of a training run. metrics.json omits wall-clock
/// timestamps so seeded runs serialize identically; log.txt keeps them.
struct RunLog {
  std::string experiment;
  std::uint64_t seed = 0;
  bool deterministic = true;
  std::vector<double> epoch_lr;
  std::vector<LogRecord> iterations;
  std::vector<TestRecord> tests;
  std::vector<std::string> checkpoints;
  std::vector<std::string> notes;

  [[nodiscard]] json to_json() const {
    json it = json::array(), ts = json::array();
    for (const auto &r : iterations)
      it.push_back({{"iteration", r.iteration}, {"epoch", r.epoch}, {"loss", r.loss}, {"lr", r.lr}});
    for (const auto &t : tests) ts.push_back({{"epoch", t.epoch}, {"metric", t.metric}, {"value", t.value}});
    return {{"experiment_name", experiment}, {"seed", seed},      {"deterministic", deterministic},
            {"epoch_lr", epoch_lr},         {"iterations", it},  {"tests", ts},
            {"checkpoints", checkpoints},   {"notes", notes}};
  }

  [[nodiscard]] std::string to_text() const {
    std::ostringstream os;
    os << "experiment: " << experiment << "\nseed: " << seed << (deterministic ? " (deterministic)" : "") << '\n';
    for (const auto &n : notes) os << "note: " << n << '\n';
    for (const auto &r : iterations)
      os << '[' << r.timestamp << "] epoch " << r.epoch << " iteration " << r.iteration << " lr "
         << r.lr << " loss " << std::setprecision(6) << r.loss << '\n';
    for (const auto &t : tests) os << "test epoch " << t.epoch << ' ' << t.metric << ' ' << t.value << '\n';
    for (const auto &c : checkpoints) os << "checkpoint " << c << '\n';
    return os.str();
  }

  /// Merges into dir/metrics.json (keeping any test reports) and appends to
  /// dir/log.txt.
  void write(const std::filesystem::path &dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "log.txt", std::ios::app) << to_text();
    json doc = std::filesystem::exists(dir / "metrics.json") ? read_json(dir / "metrics.json") : json::object();
    doc.update(to_json());
    write_json(dir / "metrics.json", doc);
  }
};

inline std::string now_timestamp() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%d %H:%M:%S");
  return os.str();
}

/// Targets for one batch: loss = w * CE(primary) + (1 - w) * CE(partner).
struct MixedTargets {
  std::vector<int> primary;
  std::vector<int> partner;
  double primary_weight = 1.0;
};

/// Rewrites a batch in place before the forward pass (e.g. CutMix).
using BatchMixer = std::function<MixedTargets(nn::Tensor &batch, std::span<const int> labels, Rng &rng)>;

struct PeriodicTest {
  std::string metric;
  std::function<double(nn::Model &)> run;
};

struct TrainOptions {
  Seeding seeding{};
  Loss loss = Loss::CrossEntropy;
  std::vector<PeriodicTest> periodic_tests;
  BatchMixer mixer;
  bool write_artifacts = true;
  std::optional<std::filesystem::path> output_dir; ///< default: save_dir/experiment_name
  std::vector<std::string> notes;
};

struct Batch {
  nn::Tensor inputs;
  std::vector<int> labels;
  std::vector<int> original_labels;
  std::vector<std::size_t> indices;
};

/// Materializes positions [begin, end) of `order`. Workers fill disjoint
/// slots and every item is seeded independently, so the result does not
/// depend on num_workers.
inline Batch load_batch(const Dataset &data, std::span<const std::size_t> positions, std::uint64_t epoch,
                        int num_workers = 0) {
  std::vector<Example> items(positions.size());
  const auto fill = [&](std::size_t from, std::size_t to) {
    for (std::size_t i = from; i < to; ++i) items[i] = data.at(positions[i], epoch);
  };
  const std::size_t workers = std::min<std::size_t>(std::max(num_workers, 1), positions.size());
  if (workers <= 1) {
    fill(0, positions.size());
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (positions.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back(fill, std::min(w * chunk, positions.size()), std::min((w + 1) * chunk, positions.size()));
  }
  Batch b;
  std::vector<FloatImage> images;
  images.reserve(items.size());
  for (auto &ex : items) {
    images.push_back(std::move(ex.pixels));
    b.labels.push_back(ex.label);
    b.original_labels.push_back(ex.original_label);
    b.indices.push_back(ex.index);
  }
  b.inputs = nn::batch_from_images(images);
  return b;
}

inline std::filesystem::path experiment_dir(const TrainSchedule &s) {
  return std::filesystem::path(s.save_dir) / s.experiment_name;
}

/// Momentum SGD over `data` following `schedule`. Only parameters of the
/// model's trainable layers are updated.
inline RunLog train(nn::Model &model, const Dataset &data, const TrainSchedule &schedule,
                    const TrainOptions &options = {}) {
  schedule.validate();
  const auto dir = options.output_dir.value_or(experiment_dir(schedule));
  RunLog log;
  log.experiment = schedule.experiment_name;
  log.seed = options.seeding.seed;
  log.deterministic = options.seeding.deterministic;
  log.notes = options.notes;
  if (schedule.device == Device::GPU)
    log.notes.push_back("GPU requested (CUDA_VISIBLE_DEVICES=" + schedule.device_selector +
                        "); no GPU backend is built, running on CPU");
  if (data.empty() && schedule.epochs > 0) throw ValidationError("dataset", "is empty");

  nn::Sgd optimizer(schedule.momentum, schedule.weight_decay);
  const auto trainable = model.trainable_parameters();
  std::vector<std::size_t> order(data.size());
  std::size_t iteration = 0;
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    const double lr = schedule.lr_at_epoch(epoch);
    log.epoch_lr.push_back(lr);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = make_rng(options.seeding.seed, Stream::shuffle, {static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), shuffle);
    for (std::size_t begin = 0; begin < order.size(); begin += schedule.batch_size) {
      const std::size_t end = std::min(order.size(), begin + schedule.batch_size);
      Batch batch = load_batch(data, std::span(order).subspan(begin, end - begin),
                               static_cast<std::uint64_t>(epoch), schedule.num_workers);
      ++iteration;
      MixedTargets targets{batch.labels, {}, 1.0};
      if (options.mixer) {
        Rng mix = make_rng(options.seeding.seed, Stream::cutmix, {iteration});
        targets = options.mixer(batch.inputs, batch.labels, mix);
      }
      model.zero_grad();
      const nn::Tensor logits = model.forward(batch.inputs, true);
      nn::Tensor grad(logits.n(), logits.c(), 1, 1);
      double loss = nn::cross_entropy(logits, targets.primary, &grad, targets.primary_weight) *
                    targets.primary_weight;
      if (targets.primary_weight < 1.0)
        loss += nn::cross_entropy(logits, targets.partner, &grad, 1.0 - targets.primary_weight) *
                (1.0 - targets.primary_weight);
      model.backward(grad);
      optimizer.step(model, lr, trainable);
      if (iteration % schedule.log_iteration_interval == 0)
        log.iterations.push_back({iteration, epoch, loss, lr, now_timestamp()});
    }
    if ((epoch + 1) % schedule.test_epoch_interval == 0)
      for (const auto &t : options.periodic_tests) log.tests.push_back({epoch, t.metric, t.run(model)});
    if (options.write_artifacts && (epoch + 1) % schedule.save_epoch_interval == 0) {
      const auto path = dir / "checkpoints" / ("ckpt_epoch_" + std::to_string(epoch + 1) + ".bbx");
      nn::save_checkpoint(path, model, schedule.to_json());
      log.checkpoints.push_back(std::filesystem::relative(path, dir).string());
    }
  }
  if (options.write_artifacts) log.write(dir);
  return log;
}

struct Predictions {
  std::vector<int> predicted;
  std::vector<int> labels;
  std::vector<int> original_labels;
  std::vector<std::size_t> indices;
};

/// Optional per-image input transform applied before the forward pass,
/// keyed by the item's position in the dataset.
using Preprocess = std::function<FloatImage(FloatImage, std::size_t position)>;

inline Predictions predict(nn::Model &model, const Dataset &data, int batch_size = 128, int num_workers = 0,
                           const Preprocess &preprocess = {}) {
  Predictions out;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(batch_size));
    Batch b = load_batch(data, std::span(order).subspan(begin, end - begin), 0, num_workers);
    if (preprocess) {
      std::vector<FloatImage> images;
      for (int n = 0; n < b.inputs.n(); ++n) images.push_back(preprocess(nn::image_from_batch(b.inputs, n), begin + n));
      b.inputs = nn::batch_from_images(images);
    }
    const auto pred = nn::argmax_rows(model.forward(b.inputs, false));
    out.predicted.insert(out.predicted.end(), pred.begin(), pred.end());
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    out.original_labels.insert(out.original_labels.end(), b.original_labels.begin(), b.original_labels.end());
    out.indices.insert(out.indices.end(), b.indices.begin(), b.indices.end());
  }
  return out;
}

/// Computes a model metric from predictions. BA uses the dataset's labels;
/// ASR variants use the original labels carried by triggered samples.
inline EvalReport report_from_predictions(const Predictions &p, Metric metric, std::optional<int> y_target) {
  switch (metric) {
  case Metric::BA: return benign_accuracy(p.predicted, p.labels);
  case Metric::ASR:
  case Metric::ASR_NoTarget: return attack_success_rate(p.predicted, p.original_labels, y_target, metric);
  default:
    throw ValidationError("metric", to_string(metric) + " scores a sample filter, not a model; use filter_test");
  }
}

inline EvalReport benign_accuracy(nn::Model &model, const Dataset &benign_test, int batch_size = 128) {
  return report_from_predictions(predict(model, benign_test, batch_size), Metric::BA, std::nullopt);
}

inline EvalReport attack_success_rate(nn::Model &model, const Dataset &poisoned_test, int y_target, AsrMode mode,
                                      int batch_size = 128) {
  return report_from_predictions(predict(model, poisoned_test, batch_size),
                                 mode == AsrMode::All ? Metric::ASR : Metric::ASR_NoTarget, y_target);
}

/// Appends a report to save_dir/experiment_name/{metrics.json, log.txt}.
inline void write_report(const std::filesystem::path &dir, const EvalReport &report, const json &schedule) {
  std::filesystem::create_directories(dir);
  json doc = std::filesystem::exists(dir / "metrics.json") ? read_json(dir / "metrics.json") : json::object();
  if (!doc.contains("reports")) doc["reports"] = json::array();
  json entry = report.to_json();
  entry["schedule"] = schedule;
  doc["reports"].push_back(std::move(entry));
  write_json(dir / "metrics.json", doc);
  std::ofstream(dir / "log.txt", std::ios::app)
      << '[' << now_timestamp() << "] " << to_string(report.metric) << " = " << report.value << " over "
      << report.population << " samples\n";
}

/// Evaluates `metric` from the test schedule and writes the report under
/// save_dir/experiment_name.
inline EvalReport evaluate(nn::Model &model, const Dataset &data, const TestSchedule &schedule,
                           const Preprocess &preprocess = {}, bool write = true) {
  schedule.validate();
  const Metric metric = parse_metric(schedule.metric);
  auto report = report_from_predictions(
      predict(model, data, schedule.batch_size, schedule.num_workers, preprocess), metric, schedule.y_target);
  if (write)
    write_report(std::filesystem::path(schedule.save_dir) / schedule.experiment_name, report, schedule.to_json());
  return report;
}

} // namespace bbox
