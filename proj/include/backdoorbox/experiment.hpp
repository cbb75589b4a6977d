#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "backdoorbox/attack.hpp"
#include "backdoorbox/dataset.hpp"
#include "backdoorbox/defense/cutmix.hpp"
#include "backdoorbox/defense/repair.hpp"
#include "backdoorbox/defense/shrinkpad.hpp"
#include "backdoorbox/defense/spectral.hpp"
#include "backdoorbox/nn/checkpoint.hpp"
#include "backdoorbox/synthetic.hpp"
#include "backdoorbox/trainer.hpp"

namespace bbox {

inline constexpr const char *version = "0.1.0";

/// Where images come from plus the per-split transform chains.
struct DatasetSource {
  std::string builtin = "synthetic-digits"; ///< synthetic-digits | mnist | cifar10; empty for folder
  std::string path;                         ///< mnist / cifar10 directory
  std::string train_folder, test_folder;
  std::size_t train_size = 2000, test_size = 500;
  std::uint64_t data_seed = 0;
  json transform_train = json::array();
  json transform_test = json::array();

  [[nodiscard]] json to_json() const {
    json j = json::object();
    if (builtin.empty()) {
      j["folder"] = {{"train", train_folder}, {"test", test_folder}};
    } else {
      j["builtin"] = builtin;
      if (builtin == "synthetic-digits") {
        j["train_size"] = train_size;
        j["test_size"] = test_size;
        j["data_seed"] = data_seed;
      } else {
        j["path"] = path;
      }
    }
    j["transform_train"] = transform_train;
    j["transform_test"] = transform_test;
    return j;
  }

  static DatasetSource from_json(const json &j) {
    detail::reject_unknown_keys(j, {"builtin", "path", "folder", "train_size", "test_size", "data_seed",
                                    "transform_train", "transform_test"},
                                "dataset");
    DatasetSource d;
    if (j.contains("folder") == j.contains("builtin"))
      throw ValidationError("dataset", "give exactly one of \"builtin\" and \"folder\"");
    if (j.contains("folder")) {
      const json &f = j["folder"];
      detail::reject_unknown_keys(f, {"train", "test"}, "folder");
      d.builtin.clear();
      d.train_folder = f.at("train").get<std::string>();
      d.test_folder = f.at("test").get<std::string>();
    } else {
      d.builtin = j["builtin"].get<std::string>();
      if (d.builtin != "synthetic-digits" && d.builtin != "mnist" && d.builtin != "cifar10")
        throw ValidationError("builtin", "unknown dataset '" + d.builtin + "' (supported: synthetic-digits, mnist, cifar10)");
      d.path = detail::get_or<std::string>(j, "path", "");
      if (d.builtin != "synthetic-digits" && d.path.empty())
        throw ValidationError("path", "required for builtin '" + d.builtin + "'");
    }
    d.train_size = detail::get_or(j, "train_size", d.train_size);
    d.test_size = detail::get_or(j, "test_size", d.test_size);
    d.data_seed = detail::get_or(j, "data_seed", d.data_seed);
    d.transform_train = j.value("transform_train", json::array());
    d.transform_test = j.value("transform_test", json::array());
    (void)chain_from_json(d.transform_train);
    (void)chain_from_json(d.transform_test);
    return d;
  }

  /// Image shape known without reading data.
  [[nodiscard]] std::optional<Shape> known_shape() const {
    if (builtin == "synthetic-digits" || builtin == "mnist") return Shape{28, 28, 1};
    if (builtin == "cifar10") return Shape{32, 32, 3};
    return std::nullopt;
  }

  [[nodiscard]] std::vector<std::string> missing_paths() const {
    std::vector<std::string> out;
    const auto check = [&](const std::string &p) {
      if (!std::filesystem::exists(p)) out.push_back("dataset path '" + p + "' does not exist");
    };
    if (builtin.empty()) {
      check(train_folder);
      check(test_folder);
    } else if (builtin != "synthetic-digits") {
      check(path);
    }
    return out;
  }

  [[nodiscard]] DatasetPair load() const {
    DatasetPair pair = [&] {
      if (builtin == "synthetic-digits") return make_synthetic_digits_pair(train_size, test_size, data_seed);
      if (builtin == "mnist") return load_mnist(path);
      if (builtin == "cifar10") return load_cifar10(path);
      return DatasetPair{load_folder(train_folder, Split::train), load_folder(test_folder, Split::test)};
    }();
    pair.train.set_chain(chain_from_json(transform_train));
    pair.test.set_chain(chain_from_json(transform_test));
    return pair;
  }
};

enum class DefenseMethod { ShrinkPad, FineTuning, Pruning, CutMix, SpectralSignature };

inline std::string to_string(DefenseMethod m) {
  switch (m) {
  case DefenseMethod::ShrinkPad: return "ShrinkPad";
  case DefenseMethod::FineTuning: return "FineTuning";
  case DefenseMethod::Pruning: return "Pruning";
  case DefenseMethod::CutMix: return "CutMix";
  default: return "SpectralSignature";
  }
}

inline std::string family_of(DefenseMethod m) {
  switch (m) {
  case DefenseMethod::ShrinkPad: return "preprocessing";
  case DefenseMethod::FineTuning:
  case DefenseMethod::Pruning: return "repair";
  case DefenseMethod::CutMix: return "suppression";
  default: return "diagnosis";
  }
}

inline DefenseMethod parse_defense_method(const std::string &s) {
  for (auto m : {DefenseMethod::ShrinkPad, DefenseMethod::FineTuning, DefenseMethod::Pruning, DefenseMethod::CutMix,
                 DefenseMethod::SpectralSignature})
    if (to_string(m) == s) return m;
  throw ValidationError("method",
                        "unknown defense '" + s + "' (supported: ShrinkPad, FineTuning, Pruning, CutMix, SpectralSignature)");
}

struct DefenseStage {
  DefenseMethod method = DefenseMethod::ShrinkPad;
  json params = json::object();

  [[nodiscard]] json to_json() const {
    return {{"family", family_of(method)}, {"method", to_string(method)}, {"params", params}};
  }

  static DefenseStage from_json(const json &j) {
    detail::reject_unknown_keys(j, {"family", "method", "params"}, "defense");
    DefenseStage d;
    d.method = parse_defense_method(j.at("method").get<std::string>());
    if (j.contains("family") && j["family"].get<std::string>() != family_of(d.method))
      throw ValidationError("family", to_string(d.method) + " belongs to family '" + family_of(d.method) + "'");
    d.params = j.value("params", json::object());
    static const std::map<DefenseMethod, std::set<std::string>> keys{
        {DefenseMethod::ShrinkPad, {"size_map", "pad"}},
        {DefenseMethod::FineTuning, {"layer", "clean_fraction", "schedule"}},
        {DefenseMethod::Pruning, {"layer", "prune_fraction", "clean_fraction"}},
        {DefenseMethod::CutMix, {"beta", "cutmix_prob", "schedule"}},
        {DefenseMethod::SpectralSignature, {"percentile", "feature_layer"}}};
    detail::reject_unknown_keys(d.params, keys.at(d.method), to_string(d.method) + " params");
    return d;
  }

  [[nodiscard]] bool needs_model() const { return method != DefenseMethod::CutMix; }
};

/// Declarative experiment: dataset, optional attack, ordered defenses and
/// test schedules.
struct ExperimentManifest {
  std::string experiment_name = "experiment";
  std::string output_dir = "runs";
  std::uint64_t seed = 0;
  bool deterministic = true;
  DatasetSource dataset;
  json model = {{"architecture", "small-cnn"}};
  std::optional<json> attack;
  TrainSchedule train_schedule;
  std::optional<std::string> checkpoint;
  std::vector<DefenseStage> defenses;
  std::vector<json> test_schedules;

  [[nodiscard]] json to_json() const {
    json d = json::array();
    for (const auto &s : defenses) d.push_back(s.to_json());
    json j{{"experiment_name", experiment_name},
           {"output_dir", output_dir},
           {"seed", seed},
           {"deterministic", deterministic},
           {"dataset", dataset.to_json()},
           {"model", model},
           {"train_schedule", train_schedule.to_json()},
           {"defenses", d},
           {"test_schedules", test_schedules}};
    if (attack) j["attack"] = *attack;
    if (checkpoint) j["checkpoint"] = *checkpoint;
    return j;
  }

  /// Strict parse; throws on malformed documents. Semantic checks live in
  /// validate().
  static ExperimentManifest from_json(const json &j) {
    detail::reject_unknown_keys(j, {"experiment_name", "output_dir", "seed", "deterministic", "dataset", "model",
                                    "attack", "train_schedule", "checkpoint", "defenses", "test_schedules",
                                    "code_version"},
                                "manifest");
    ExperimentManifest m;
    m.experiment_name = detail::get_or(j, "experiment_name", m.experiment_name);
    m.output_dir = detail::get_or(j, "output_dir", m.output_dir);
    m.seed = detail::get_or(j, "seed", m.seed);
    m.deterministic = detail::get_or(j, "deterministic", m.deterministic);
    m.dataset = DatasetSource::from_json(j.value("dataset", json::object({{"builtin", "synthetic-digits"}})));
    if (j.contains("model")) {
      detail::reject_unknown_keys(j["model"], {"architecture", "base_width"}, "model");
      m.model = j["model"];
    }
    if (j.contains("attack") && !j["attack"].is_null()) {
      (void)AttackConfig::from_json(j["attack"]);
      m.attack = j["attack"];
    }
    m.train_schedule = TrainSchedule::from_json(j.value("train_schedule", json::object()));
    if (j.contains("checkpoint") && !j["checkpoint"].is_null()) m.checkpoint = j["checkpoint"].get<std::string>();
    for (const auto &d : j.value("defenses", json::array())) m.defenses.push_back(DefenseStage::from_json(d));
    for (const auto &t : j.value("test_schedules", json::array())) {
      (void)TestSchedule::from_json(t);
      m.test_schedules.push_back(t);
    }
    return m;
  }

  static ExperimentManifest load(const std::filesystem::path &path) { return from_json(read_json(path)); }

  [[nodiscard]] std::filesystem::path run_dir() const {
    return std::filesystem::path(output_dir) / experiment_name;
  }
};

namespace detail {

inline bool is_detection(Metric m) { return m == Metric::Precision || m == Metric::Recall; }

inline std::string format_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

/// Stage label used in report experiment names, e.g. "ShrinkPad-4".
inline std::string stage_label(const DefenseStage &d) {
  switch (d.method) {
  case DefenseMethod::ShrinkPad: return "ShrinkPad-" + std::to_string(d.params.value("pad", 4));
  case DefenseMethod::Pruning: return "Pruning-" + format_number(d.params.value("prune_fraction", 0.2));
  default: return to_string(d.method);
  }
}

inline std::string default_prune_layer(const std::string &architecture) {
  return architecture == "resnet-18" ? "layer4.1" : "relu2";
}

/// Base schedule with the stage's overrides applied key by key.
inline TrainSchedule stage_schedule(const TrainSchedule &base, const json &params) {
  json j = base.to_json();
  if (params.contains("schedule")) j.merge_patch(params["schedule"]);
  return TrainSchedule::from_json(j);
}

} // namespace detail

/// Schema and dependency findings; empty when the manifest can run.
inline std::vector<std::string> validate(const ExperimentManifest &m) {
  std::vector<std::string> findings;
  const auto guard = [&](const std::string &where, auto &&fn) {
    try {
      fn();
    } catch (const std::exception &e) {
      findings.push_back(where + ": " + e.what());
    }
  };

  if (!m.attack && m.defenses.empty()) findings.push_back("manifest: needs an attack, at least one defense, or both");
  if (m.experiment_name.empty()) findings.push_back("experiment_name: must not be empty");
  for (const auto &p : m.dataset.missing_paths()) findings.push_back("dataset: " + p);
  guard("train_schedule", [&] { m.train_schedule.validate(); });

  std::optional<AttackConfig> attack;
  if (m.attack) guard("attack", [&] { attack = AttackConfig::from_json(*m.attack); });
  if (m.checkpoint && !std::filesystem::exists(*m.checkpoint))
    findings.push_back("checkpoint: '" + *m.checkpoint + "' does not exist");

  std::optional<nn::Model> probe;
  if (const auto shape = m.dataset.known_shape()) {
    guard("model", [&] {
      nn::ModelSpec spec = nn::ModelSpec::from_json(m.model);
      spec.in_channels = shape->channels;
      spec.height = shape->height;
      spec.width = shape->width;
      probe.emplace(spec, 0);
    });
  }

  const bool has_model = m.attack.has_value() || m.checkpoint.has_value();
  bool has_filter = false;
  for (std::size_t k = 0; k < m.defenses.size(); ++k) {
    const auto &d = m.defenses[k];
    const std::string where = "defenses[" + std::to_string(k) + "] " + to_string(d.method);
    if (d.needs_model() && !has_model)
      findings.push_back(where + ": needs a trained model; add an attack stage or a checkpoint");
    guard(where, [&] {
      switch (d.method) {
      case DefenseMethod::ShrinkPad: {
        ShrinkPadConfig cfg;
        cfg.size_map = d.params.value("size_map", m.dataset.known_shape() ? m.dataset.known_shape()->height : 32);
        cfg.pad = d.params.value("pad", 4);
        cfg.validate();
        if (m.dataset.known_shape() && cfg.size_map != m.dataset.known_shape()->height)
          throw ValidationError("size_map", "does not match the image side " +
                                                std::to_string(m.dataset.known_shape()->height));
        break;
      }
      case DefenseMethod::FineTuning: {
        const auto layers = d.params.value("layer", std::vector<std::string>{"full layers"});
        if (layers.empty()) throw ValidationError("layer", "at least one layer (or \"full layers\") is required");
        if (probe)
          for (const auto &l : layers)
            if (l != "full layers") probe->require_layer(l);
        const double f = d.params.value("clean_fraction", 0.1);
        if (!(f > 0 && f <= 1)) throw ValidationError("clean_fraction", "must lie in (0,1]");
        detail::stage_schedule(m.train_schedule, d.params).validate();
        break;
      }
      case DefenseMethod::Pruning: {
        const double f = d.params.value("prune_fraction", 0.2);
        if (!(f >= 0 && f <= 1)) throw ValidationError("prune_fraction", "must lie in [0,1]");
        const double c = d.params.value("clean_fraction", 0.1);
        if (!(c > 0 && c <= 1)) throw ValidationError("clean_fraction", "must lie in (0,1]");
        if (probe)
          probe->require_layer(d.params.value("layer", detail::default_prune_layer(probe->spec().architecture)));
        break;
      }
      case DefenseMethod::CutMix: {
        CutMixConfig{d.params.value("beta", 1.0), d.params.value("cutmix_prob", 1.0)}.validate();
        detail::stage_schedule(m.train_schedule, d.params).validate();
        break;
      }
      case DefenseMethod::SpectralSignature: {
        has_filter = true;
        const double p = d.params.value("percentile", 80.0);
        if (!(p >= 0 && p <= 100)) throw ValidationError("percentile", "must lie in [0,100]");
        if (!m.attack) throw ValidationError("attack", "ground truth for the filter comes from an attack stage");
        const std::string layer = d.params.value("feature_layer", std::string{});
        if (probe && !layer.empty()) probe->require_layer(layer);
        break;
      }
      }
    });
  }

  for (std::size_t k = 0; k < m.test_schedules.size(); ++k) {
    const std::string where = "test_schedules[" + std::to_string(k) + "]";
    guard(where, [&] {
      const TestSchedule t = TestSchedule::from_json(m.test_schedules[k]);
      t.validate();
      const Metric metric = parse_metric(t.metric);
      if (metric == Metric::ASR || metric == Metric::ASR_NoTarget) {
        const bool attack_target = m.attack && m.attack->contains("y_target");
        if (!t.y_target && !attack_target)
          throw ValidationError("y_target", "required by metric " + t.metric);
        if (!m.attack) throw ValidationError("attack", "metric " + t.metric + " needs a trigger from an attack stage");
        if (t.y_target && attack && *t.y_target != attack->y_target)
          throw ValidationError("y_target", "test schedule y_target " + std::to_string(*t.y_target) +
                                                " differs from the attack's " + std::to_string(attack->y_target));
      }
      if (detail::is_detection(metric) && !has_filter)
        throw ValidationError("metric", t.metric + " scores a sample filter; add a SpectralSignature defense");
    });
  }
  return findings;
}

/// Command-line overrides applied on top of a manifest.
struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<std::string> device;
};

/// Applies overrides and the CUDA_VISIBLE_DEVICES environment variable, and
/// fixes the seed so the result can be replayed.
inline ExperimentManifest resolve(ExperimentManifest m, const RunOverrides &o = {}) {
  if (o.seed) m.seed = *o.seed;
  if (o.output_dir) m.output_dir = *o.output_dir;
  if (!m.deterministic && !o.seed) m.seed = entropy_seed();
  std::optional<Device> device;
  if (o.device) device = parse_device(*o.device);
  if (const char *env = std::getenv("CUDA_VISIBLE_DEVICES")) {
    m.train_schedule.device_selector = env;
    if (std::string(env).empty() || std::string(env) == "-1") device = Device::CPU;
  }
  if (device) m.train_schedule.device = *device;
  for (auto &t : m.test_schedules) {
    if (device) t["device"] = to_string(*device);
    if (const char *env = std::getenv("CUDA_VISIBLE_DEVICES")) t["CUDA_VISIBLE_DEVICES"] = env;
  }
  return m;
}

/// One entry of summary.json.
struct StageReport {
  std::string stage;  ///< "attack" or "defense"
  std::string method; ///< attack kind or defense method
  std::string experiment;
  EvalReport report;

  [[nodiscard]] json to_json() const {
    json j = report.to_json();
    j["stage"] = stage;
    j["method"] = method;
    j["experiment_name"] = experiment;
    return j;
  }
};

struct RunResult {
  std::filesystem::path dir;
  std::vector<StageReport> reports;
  std::vector<std::string> warnings;

  [[nodiscard]] json summary(const ExperimentManifest &m) const {
    json r = json::array();
    for (const auto &s : reports) r.push_back(s.to_json());
    return {{"experiment_name", m.experiment_name}, {"seed", m.seed}, {"reports", r}, {"warnings", warnings}};
  }
};

namespace detail {

inline void write_lock(const ExperimentManifest &m, const std::filesystem::path &dir) {
  json lock = m.to_json();
  lock["code_version"] = version;
  write_json(dir / "manifest.lock.json", lock);
}

inline void log_line(const std::filesystem::path &dir, const std::string &line) {
  std::ofstream(dir / "log.txt", std::ios::app) << '[' << now_timestamp() << "] " << line << '\n';
}

/// Removes outputs of an earlier run of the same experiment that would
/// otherwise be appended to.
inline void reset_run_files(const std::filesystem::path &dir) {
  for (const char *name : {"summary.json", "metrics.json", "log.txt", "FAILED"}) std::filesystem::remove(dir / name);
}

inline Dataset clean_subset(const Dataset &benign, double fraction, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(benign.size())));
  std::vector<std::size_t> order(benign.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, Stream::subset, {0});
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(std::max<std::size_t>(n, 1));
  std::sort(order.begin(), order.end());
  return benign.subset(order);
}

} // namespace detail

/// Everything a run builds before the defense stages.
struct Prepared {
  ExperimentManifest manifest;
  Seeding seeding;
  DatasetPair benign;
  nn::ModelSpec spec;
  std::optional<AttackSession> attack;
};

inline Prepared prepare(const ExperimentManifest &m) {
  Prepared p{m, m.deterministic ? set_deterministic(m.seed) : Seeding{m.seed, false}, m.dataset.load(), {}, {}};
  const Shape shape = p.benign.train.shape();
  p.spec = nn::ModelSpec::from_json(m.model);
  p.spec.in_channels = shape.channels;
  p.spec.height = shape.height;
  p.spec.width = shape.width;
  p.spec.num_classes = p.benign.train.num_classes();
  if (m.attack) {
    AttackConfig cfg = AttackConfig::from_json(*m.attack);
    cfg.seed = m.seed;
    cfg.deterministic = true; // the manifest seed is already resolved
    p.attack.emplace(cfg, p.benign.train, p.benign.test, nn::Model(p.spec, m.seed));
    p.seeding.seed = m.seed;
  } else {
    p.benign.train.set_seed(derive_seed(m.seed, Stream::sample, {0}));
    p.benign.test.set_seed(derive_seed(m.seed, Stream::sample, {1}));
  }
  return p;
}

/// Builds the poisoned datasets and writes them to
/// output_dir/experiment_name/poisoned_data.
inline std::filesystem::path export_poison(const ExperimentManifest &manifest, const RunOverrides &overrides = {}) {
  const ExperimentManifest m = resolve(manifest, overrides);
  if (!m.attack) throw ValidationError("attack", "export-poison needs an attack stage");
  const Prepared p = prepare(m);
  const auto dir = m.run_dir();
  std::filesystem::create_directories(dir);
  detail::write_lock(m, dir);
  if (is_training_controlled(p.attack->config().kind))
    throw UnsupportedError(to_string(p.attack->config().kind) +
                           " poisons samples during training; its poisoned dataset can only be exported by run");
  const auto [train, test] = p.attack->get_poisoned_dataset();
  export_poisoned({train, test, p.attack->manifest()}, dir / "poisoned_data");
  return dir / "poisoned_data";
}

/// Runs every stage in order and writes the artifacts. A failing stage
/// leaves the completed artifacts and a FAILED marker.
inline RunResult run(const ExperimentManifest &manifest, const RunOverrides &overrides = {}) {
  const ExperimentManifest m = resolve(manifest, overrides);
  if (const auto findings = validate(m); !findings.empty()) {
    std::string msg;
    for (const auto &f : findings) msg += "\n  " + f;
    throw ValidationError("manifest", std::to_string(findings.size()) + " finding(s):" + msg);
  }
  RunResult result;
  result.dir = m.run_dir();
  const auto dir = result.dir;
  std::filesystem::create_directories(dir);
  detail::reset_run_files(dir);
  detail::write_lock(m, dir);

  std::string stage = "prepare";
  try {
    Prepared p = prepare(m);
    const auto tests = [&] {
      std::vector<TestSchedule> out;
      for (const auto &t : m.test_schedules) {
        TestSchedule s = TestSchedule::from_json(t);
        if (!s.y_target && p.attack) s.y_target = p.attack->config().y_target;
        out.push_back(s);
      }
      return out;
    }();
    const auto record = [&](const std::string &stage_kind, const std::string &method, const std::string &label,
                            EvalReport report, const TestSchedule &t) {
      StageReport s{stage_kind, method, label + "_" + to_string(report.metric), std::move(report)};
      json schedule = t.to_json();
      schedule["experiment_name"] = s.experiment;
      write_report(dir, s.report, schedule);
      result.reports.push_back(std::move(s));
    };
    std::optional<Dataset> poisoned_test;
    const auto model_reports = [&](const std::string &stage_kind, const std::string &method,
                                   const std::string &label, nn::Model &model, const Preprocess &pre) {
      for (const auto &t : tests) {
        const Metric metric = parse_metric(t.metric);
        if (detail::is_detection(metric)) continue;
        const Dataset &data = metric == Metric::BA ? p.benign.test : *poisoned_test;
        record(stage_kind, method, label,
               report_from_predictions(predict(model, data, t.batch_size, t.num_workers, pre), metric, t.y_target),
               t);
      }
    };

    std::optional<nn::Model> attacked;
    if (m.checkpoint) {
      stage = "checkpoint";
      attacked = nn::load_checkpoint(*m.checkpoint).model;
      detail::log_line(dir, "loaded model from " + *m.checkpoint);
    }
    if (p.attack) {
      stage = "attack";
      const std::string kind = to_string(p.attack->config().kind);
      if (!is_training_controlled(p.attack->config().kind)) {
        const auto [train, test] = p.attack->get_poisoned_dataset();
        export_poisoned({train, test, p.attack->manifest()}, dir / "poisoned_data");
      }
      if (attacked) {
        p.attack->adopt_trained_model(*attacked);
      } else {
        TrainOptions options;
        options.output_dir = dir;
        p.attack->train(m.train_schedule, options);
        attacked = p.attack->get_model();
        nn::save_checkpoint(dir / "checkpoints" / "attacked.bbx", *attacked, m.train_schedule.to_json());
      }
      if (is_training_controlled(p.attack->config().kind)) {
        const auto [train, test] = p.attack->get_poisoned_dataset();
        export_poisoned({train, test, p.attack->manifest()}, dir / "poisoned_data");
      }
      poisoned_test = p.attack->get_poisoned_dataset().second;
      model_reports("attack", kind, kind, *attacked, {});
    }

    std::map<std::string, int> label_uses;
    for (const auto &d : m.defenses) ++label_uses[detail::stage_label(d)];
    for (std::size_t k = 0; k < m.defenses.size(); ++k) {
      const DefenseStage &d = m.defenses[k];
      const std::string method = to_string(d.method);
      std::string label = detail::stage_label(d);
      if (label_uses[label] > 1) label += "#" + std::to_string(k);
      stage = "defenses[" + std::to_string(k) + "] " + method;
      const std::uint64_t stage_seed = derive_seed(m.seed, Stream::defense, {k});
      const auto stage_dir = dir / "defenses" / (std::to_string(k) + "_" + method);
      detail::log_line(dir, "defense " + label);
      switch (d.method) {
      case DefenseMethod::ShrinkPad: {
        ShrinkPadConfig cfg;
        cfg.size_map = d.params.value("size_map", p.spec.height);
        cfg.pad = d.params.value("pad", 4);
        cfg.seed = stage_seed;
        cfg.deterministic = true;
        nn::Model model = *attacked;
        model_reports("defense", method, label, model, ShrinkPad(cfg).as_preprocess());
        break;
      }
      case DefenseMethod::FineTuning: {
        RepairConfig cfg;
        cfg.layers = d.params.value("layer", std::vector<std::string>{"full layers"});
        cfg.schedule = detail::stage_schedule(m.train_schedule, d.params);
        cfg.schedule.experiment_name = label;
        TrainOptions options;
        options.seeding = {stage_seed, m.deterministic};
        options.output_dir = stage_dir;
        const Dataset clean = detail::clean_subset(p.benign.train, d.params.value("clean_fraction", 0.1), stage_seed);
        nn::Model model = finetune_repair(*attacked, clean, cfg, options);
        model_reports("defense", method, label, model, {});
        break;
      }
      case DefenseMethod::Pruning: {
        const std::string layer = d.params.value("layer", detail::default_prune_layer(p.spec.architecture));
        const Dataset clean = detail::clean_subset(p.benign.train, d.params.value("clean_fraction", 0.1), stage_seed);
        std::vector<int> pruned;
        nn::Model model = prune_repair(*attacked, clean, layer, d.params.value("prune_fraction", 0.2), 128, &pruned);
        nn::save_checkpoint(stage_dir / "pruned.bbx", model);
        write_json(stage_dir / "pruned_channels.json", {{"layer", layer}, {"channels", pruned}});
        model_reports("defense", method, label, model, {});
        break;
      }
      case DefenseMethod::CutMix: {
        const CutMixConfig cfg{d.params.value("beta", 1.0), d.params.value("cutmix_prob", 1.0)};
        TrainSchedule schedule = detail::stage_schedule(m.train_schedule, d.params);
        schedule.experiment_name = label;
        TrainOptions options;
        options.seeding = {stage_seed, m.deterministic};
        options.output_dir = stage_dir;
        const Dataset suspicious = p.attack ? p.attack->get_poisoned_dataset().first : p.benign.train;
        nn::Model model = cutmix_train(nn::Model(p.spec, stage_seed), suspicious, cfg, schedule, options);
        model_reports("defense", method, label, model, {});
        break;
      }
      case DefenseMethod::SpectralSignature: {
        nn::Model model = *attacked;
        const Dataset suspicious = p.attack->get_poisoned_dataset().first;
        const FilterVerdict verdict =
            spectral_filter(model, suspicious, d.params.value("feature_layer", std::string{}),
                            d.params.value("percentile", 80.0));
        write_json(stage_dir / "verdict.json", verdict.to_json());
        for (const auto &w : verdict.warnings) result.warnings.push_back(label + ": " + w);
        const auto &truth = p.attack->manifest().poisoned_indices;
        bool any = false;
        for (const auto &t : tests) {
          const Metric metric = parse_metric(t.metric);
          if (!detail::is_detection(metric)) continue;
          any = true;
          record("defense", method, label, detection_report(metric, verdict.flagged, truth), t);
        }
        if (!any) {
          TestSchedule t;
          for (Metric metric : {Metric::Precision, Metric::Recall}) {
            t.metric = to_string(metric);
            record("defense", method, label, detection_report(metric, verdict.flagged, truth), t);
          }
        }
        break;
      }
      }
    }
    stage = "summary";
    write_json(dir / "summary.json", result.summary(m));
    detail::log_line(dir, "finished with " + std::to_string(result.reports.size()) + " report(s)");
  } catch (const std::exception &e) {
    std::ofstream(dir / "FAILED") << "stage: " << stage << "\nerror: " << e.what() << '\n';
    detail::log_line(dir, "FAILED in " + stage + ": " + e.what());
    throw;
  }
  return result;
}

} // namespace bbox
