#include <gtest/gtest.h>

#include "support.hpp"

using namespace bbox;

TEST(BenignAccuracy, CountsMatches) {
  const std::vector<int> pred{0, 1, 2, 2, 1}, labels{0, 1, 1, 2, 0};
  const auto r = benign_accuracy(pred, labels);
  EXPECT_DOUBLE_EQ(r.value, 0.6);
  EXPECT_EQ(r.population, 5u);
  ASSERT_EQ(r.per_class.size(), 3u);
  EXPECT_EQ(r.per_class[1], (ClassBreakdown{1, 2, 1}));
  EXPECT_FALSE(r.y_target.has_value());
}

TEST(AttackSuccessRate, TargetClassSamplesChangeOnlyTheAllVariant) {
  // ten triggered samples, three of them originally in the target class and
  // predicted elsewhere; the other seven flip to the target
  const int target = 1;
  const std::vector<int> original{1, 1, 1, 0, 2, 3, 4, 5, 6, 7};
  const std::vector<int> pred{0, 2, 3, 1, 1, 1, 1, 1, 1, 1};
  const auto all = attack_success_rate(pred, original, target, AsrMode::All);
  const auto no_target = attack_success_rate(pred, original, target, AsrMode::NoTarget);
  EXPECT_DOUBLE_EQ(all.value, 0.7);
  EXPECT_EQ(all.population, 10u);
  EXPECT_DOUBLE_EQ(no_target.value, 1.0);
  EXPECT_EQ(no_target.population, 7u);
  EXPECT_EQ(no_target.y_target, 1);
  EXPECT_EQ(all.metric, Metric::ASR);
  EXPECT_EQ(no_target.metric, Metric::ASR_NoTarget);
}

TEST(AttackSuccessRate, InvariantUnderPermutation) {
  std::mt19937_64 rng(4);
  std::vector<int> original(200), pred(200);
  for (int i = 0; i < 200; ++i) {
    original[i] = static_cast<int>(rng() % 10);
    pred[i] = static_cast<int>(rng() % 10);
  }
  const auto base_all = attack_success_rate(pred, original, 3, AsrMode::All);
  const auto base_nt = attack_success_rate(pred, original, 3, AsrMode::NoTarget);
  const auto base_ba = benign_accuracy(pred, original);
  std::vector<std::size_t> perm(200);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> po(200), pp(200);
    for (std::size_t i = 0; i < 200; ++i) {
      po[i] = original[perm[i]];
      pp[i] = pred[perm[i]];
    }
    EXPECT_EQ(attack_success_rate(pp, po, 3, AsrMode::All).to_json(), base_all.to_json());
    EXPECT_EQ(attack_success_rate(pp, po, 3, AsrMode::NoTarget).to_json(), base_nt.to_json());
    EXPECT_EQ(benign_accuracy(pp, po).to_json(), base_ba.to_json());
  }
  EXPECT_GE(base_nt.value, 0.0);
  EXPECT_LE(base_nt.value, 1.0);
}

TEST(AttackSuccessRate, EmptyPopulationIsFlagged) {
  const std::vector<int> original{2, 2}, pred{2, 0};
  const auto r = attack_success_rate(pred, original, 2, AsrMode::NoTarget);
  EXPECT_TRUE(r.empty_population);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.population, 0u);
  EXPECT_FALSE(r.warnings.empty());
  EXPECT_TRUE(benign_accuracy(std::vector<int>{}, std::vector<int>{}).empty_population);
}

TEST(AttackSuccessRate, RequiresTarget) {
  const std::vector<int> v{0};
  EXPECT_THROW((void)attack_success_rate(v, v, std::nullopt, Metric::ASR), ValidationError);
  EXPECT_THROW((void)attack_success_rate(v, v, 0, Metric::BA), ValidationError);
  EXPECT_THROW((void)benign_accuracy(v, std::vector<int>{0, 1}), ShapeError);
}

TEST(Metric, UnknownNameListsSupported) {
  try {
    (void)parse_metric("F1");
    FAIL();
  } catch (const ValidationError &e) {
    const std::string what = e.what();
    for (const auto &name : metric_names()) EXPECT_NE(what.find(name), std::string::npos) << what;
  }
  for (const auto &name : metric_names()) EXPECT_EQ(to_string(parse_metric(name)), name);
}

TEST(Detection, PrecisionAndRecall) {
  const std::vector<std::size_t> flagged{1, 2, 3, 4}, truth{3, 4, 5};
  EXPECT_DOUBLE_EQ(detection_report(Metric::Precision, flagged, truth).value, 0.5);
  EXPECT_DOUBLE_EQ(detection_report(Metric::Recall, flagged, truth).value, 2.0 / 3.0);
  EXPECT_THROW((void)detection_report(Metric::BA, flagged, truth), ValidationError);
}

TEST(Detection, EmptySetsYieldZeroWithWarning) {
  const std::vector<std::size_t> none, truth{3};
  const auto p = detection_report(Metric::Precision, none, truth);
  EXPECT_EQ(p.value, 0.0);
  EXPECT_TRUE(p.empty_population);
  ASSERT_EQ(p.warnings.size(), 1u);
  const auto r = detection_report(Metric::Recall, truth, none);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_FALSE(r.warnings.empty());
}

TEST(EvalReport, JsonShape) {
  auto r = attack_success_rate(std::vector<int>{1, 0}, std::vector<int>{0, 0}, 1, AsrMode::All);
  const json j = r.to_json();
  EXPECT_EQ(j["metric"], "ASR");
  EXPECT_EQ(j["value"], 0.5);
  EXPECT_EQ(j["y_target"], 1);
  EXPECT_EQ(j["per_class"][0]["count"], 2);
  EXPECT_FALSE(j.contains("warnings"));
  EXPECT_TRUE(benign_accuracy(std::vector<int>{}, std::vector<int>{}).to_json()["y_target"].is_null());
}
