#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "backdoorbox/error.hpp"

namespace bbox {

using json = nlohmann::json;

enum class Metric { BA, ASR, ASR_NoTarget, Precision, Recall };

inline const std::vector<std::string> &metric_names() {
  static const std::vector<std::string> names{"BA", "ASR", "ASR_NoTarget", "Precision", "Recall"};
  return names;
}

inline std::string to_string(Metric m) { return metric_names()[static_cast<std::size_t>(m)]; }

inline Metric parse_metric(const std::string &s) {
  const auto &names = metric_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == s) return static_cast<Metric>(i);
  std::string list;
  for (const auto &n : names) list += (list.empty() ? "" : ", ") + n;
  throw ValidationError("metric", "unknown metric '" + s + "' (supported: " + list + ")");
}

inline bool is_asr(Metric m) { return m == Metric::ASR || m == Metric::ASR_NoTarget; }

struct ClassBreakdown {
  int label = 0;
  std::size_t count = 0;
  std::size_t hits = 0;

  bool operator==(const ClassBreakdown &) const = default;
};

struct EvalReport {
  Metric metric = Metric::BA;
  double value = 0.0;
  std::size_t population = 0;
  bool empty_population = false;
  std::optional<int> y_target;
  std::vector<ClassBreakdown> per_class; ///< keyed by ground-truth label
  std::vector<std::string> warnings;

  [[nodiscard]] json to_json() const {
    json pc = json::array();
    for (const auto &c : per_class) pc.push_back({{"label", c.label}, {"count", c.count}, {"hits", c.hits}});
    json j{{"metric", to_string(metric)},
           {"value", value},
           {"population", population},
           {"empty_population", empty_population},
           {"per_class", pc}};
    j["y_target"] = y_target ? json(*y_target) : json(nullptr);
    if (!warnings.empty()) j["warnings"] = warnings;
    return j;
  }
};

namespace detail {

inline EvalReport fraction_report(Metric metric, std::span<const int> predictions,
                                  std::span<const int> classes, auto &&is_hit, auto &&included) {
  if (predictions.size() != classes.size()) throw ShapeError("prediction and label counts differ");
  EvalReport r;
  r.metric = metric;
  std::vector<ClassBreakdown> per;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (!included(i)) continue;
    const int label = classes[i];
    auto it = std::find_if(per.begin(), per.end(), [&](const auto &c) { return c.label == label; });
    if (it == per.end()) {
      per.push_back({label, 0, 0});
      it = per.end() - 1;
    }
    ++it->count;
    ++r.population;
    if (is_hit(i)) {
      ++it->hits;
      r.value += 1.0;
    }
  }
  std::sort(per.begin(), per.end(), [](const auto &a, const auto &b) { return a.label < b.label; });
  r.per_class = std::move(per);
  if (r.population == 0) {
    r.empty_population = true;
    r.value = 0.0;
    r.warnings.push_back("empty population");
  } else {
    r.value /= static_cast<double>(r.population);
  }
  return r;
}

} // namespace detail

/// Fraction of predictions equal to the ground-truth labels.
inline EvalReport benign_accuracy(std::span<const int> predictions, std::span<const int> labels) {
  return detail::fraction_report(
      Metric::BA, predictions, labels, [&](std::size_t i) { return predictions[i] == labels[i]; },
      [](std::size_t) { return true; });
}

enum class AsrMode { All, NoTarget };

/// ALL: fraction of triggered samples predicted as y_target. NoTarget: the
/// same fraction over samples whose original label is not y_target.
inline EvalReport attack_success_rate(std::span<const int> predictions, std::span<const int> original_labels,
                                      int y_target, AsrMode mode) {
  auto r = detail::fraction_report(
      mode == AsrMode::All ? Metric::ASR : Metric::ASR_NoTarget, predictions, original_labels,
      [&](std::size_t i) { return predictions[i] == y_target; },
      [&](std::size_t i) { return mode == AsrMode::All || original_labels[i] != y_target; });
  r.y_target = y_target;
  return r;
}

inline EvalReport attack_success_rate(std::span<const int> predictions, std::span<const int> original_labels,
                                      std::optional<int> y_target, Metric metric) {
  if (!y_target) throw ValidationError("y_target", "required for " + to_string(metric));
  if (!is_asr(metric)) throw ValidationError("metric", to_string(metric) + " is not an ASR metric");
  return attack_success_rate(predictions, original_labels, *y_target,
                             metric == Metric::ASR ? AsrMode::All : AsrMode::NoTarget);
}

/// Precision (|flagged ∩ truth| / |flagged|) or recall (... / |truth|) of a
/// flagged index set. An empty denominator yields 0 with a warning.
inline EvalReport detection_report(Metric metric, std::span<const std::size_t> flagged,
                                   std::span<const std::size_t> truth) {
  if (metric != Metric::Precision && metric != Metric::Recall)
    throw ValidationError("metric", to_string(metric) + " is not a detection metric");
  const std::set<std::size_t> f(flagged.begin(), flagged.end()), t(truth.begin(), truth.end());
  std::size_t both = 0;
  for (auto i : f) both += t.contains(i);
  EvalReport r;
  r.metric = metric;
  const std::size_t denom = metric == Metric::Precision ? f.size() : t.size();
  r.population = denom;
  if (denom == 0) {
    r.empty_population = true;
    r.warnings.push_back(metric == Metric::Precision ? "no samples flagged; precision defined as 0"
                                                     : "empty ground truth; recall defined as 0");
    return r;
  }
  r.value = static_cast<double>(both) / static_cast<double>(denom);
  r.per_class.push_back({0, denom, both});
  return r;
}

} // namespace bbox
