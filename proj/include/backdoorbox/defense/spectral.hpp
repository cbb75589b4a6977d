#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "backdoorbox/dataset.hpp"
#include "backdoorbox/metrics.hpp"
#include "backdoorbox/nn/model.hpp"
#include "backdoorbox/trainer.hpp"

namespace bbox {

struct FilterVerdict {
  std::vector<std::size_t> indices; ///< sample index of each score
  std::vector<double> scores;
  std::vector<std::size_t> flagged; ///< sorted sample indices
  double percentile = 80.0;
  std::vector<std::string> warnings;

  [[nodiscard]] json to_json() const {
    json s = json::object();
    for (std::size_t i = 0; i < indices.size(); ++i) s[std::to_string(indices[i])] = scores[i];
    json j{{"scores", s}, {"flagged", flagged}, {"percentile", percentile}};
    if (!warnings.empty()) j["warnings"] = warnings;
    return j;
  }
};

/// Linear-interpolation percentile (p in [0,100]) of unsorted values.
inline double percentile_linear(std::vector<double> values, double p) {
  if (values.empty()) throw ValidationError("values", "empty");
  std::sort(values.begin(), values.end());
  const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (values[hi] - values[lo]) * (pos - static_cast<double>(lo));
}

/// Squared projection of each centered row onto the top right singular
/// vector of the centered matrix. The direction is taken as the leading
/// eigenvector of the d x d scatter matrix.
inline std::vector<double> spectral_scores(const Eigen::MatrixXd &features) {
  const Eigen::RowVectorXd mean = features.colwise().mean();
  const Eigen::MatrixXd centered = features.rowwise() - mean;
  const Eigen::MatrixXd scatter = centered.transpose() * centered;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scatter);
  const Eigen::VectorXd top = eig.eigenvectors().col(scatter.rows() - 1);
  const Eigen::VectorXd proj = centered * top;
  std::vector<double> out(proj.size());
  for (Eigen::Index i = 0; i < proj.size(); ++i) out[i] = proj[i] * proj[i];
  return out;
}

/// Per class: score samples, flag scores strictly above the class's
/// percentile threshold. Classes with fewer than two samples are skipped.
inline FilterVerdict spectral_filter(const Eigen::MatrixXd &features, std::span<const int> labels,
                                     std::span<const std::size_t> indices, double percentile) {
  if (!(percentile >= 0 && percentile <= 100)) throw ValidationError("percentile", "must lie in [0,100]");
  if (static_cast<std::size_t>(features.rows()) != labels.size() || labels.size() != indices.size())
    throw ShapeError("feature rows, labels and indices must have equal length");
  FilterVerdict v;
  v.percentile = percentile;
  v.indices.assign(indices.begin(), indices.end());
  v.scores.assign(labels.size(), 0.0);
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  for (const auto &[label, rows] : by_class) {
    if (rows.size() < 2) {
      v.warnings.push_back("class " + std::to_string(label) + " has fewer than 2 samples; skipped");
      continue;
    }
    Eigen::MatrixXd f(rows.size(), features.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) f.row(r) = features.row(rows[r]);
    const auto scores = spectral_scores(f);
    const double threshold = percentile_linear(scores, percentile);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      v.scores[rows[r]] = scores[r];
      if (scores[r] > threshold) v.flagged.push_back(indices[rows[r]]);
    }
  }
  std::sort(v.flagged.begin(), v.flagged.end());
  return v;
}

/// Features of every sample at `feature_layer` (default: penultimate layer).
inline Eigen::MatrixXd extract_features(nn::Model &model, const Dataset &data, const std::string &feature_layer,
                                        std::vector<int> &labels, std::vector<std::size_t> &indices,
                                        int batch_size = 128) {
  Eigen::MatrixXd out;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(batch_size));
    const Batch b = load_batch(data, std::span(order).subspan(begin, end - begin), 0);
    const nn::Tensor f = model.features(b.inputs, feature_layer);
    const auto d = static_cast<Eigen::Index>(f.sample_size());
    if (out.size() == 0) out.resize(static_cast<Eigen::Index>(data.size()), d);
    for (int n = 0; n < f.n(); ++n)
      for (Eigen::Index k = 0; k < d; ++k) out(static_cast<Eigen::Index>(begin) + n, k) = f.sample(n)[k];
    labels.insert(labels.end(), b.labels.begin(), b.labels.end());
    indices.insert(indices.end(), b.indices.begin(), b.indices.end());
  }
  return out;
}

inline FilterVerdict spectral_filter(nn::Model &model, const Dataset &suspicious, std::string feature_layer,
                                     double percentile, int batch_size = 128) {
  if (feature_layer.empty()) feature_layer = model.penultimate_layer();
  std::vector<int> labels;
  std::vector<std::size_t> indices;
  const auto features = extract_features(model, suspicious, feature_layer, labels, indices, batch_size);
  return spectral_filter(features, labels, indices, percentile);
}

/// Precision and recall of the flagged set against ground-truth indices.
inline std::pair<EvalReport, EvalReport> filter_test(const FilterVerdict &verdict,
                                                     std::span<const std::size_t> truth) {
  return {detection_report(Metric::Precision, verdict.flagged, truth),
          detection_report(Metric::Recall, verdict.flagged, truth)};
}

} // namespace bbox
