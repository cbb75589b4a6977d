#include <gtest/gtest.h>

#include <mutex>

#include "support.hpp"

using namespace bbox;
using testing_support::quick_schedule;
using testing_support::slurp;
using testing_support::TempDir;

namespace {

/// Class 0 lights the left half, class 1 the right half, plus noise.
Dataset halves_dataset(std::size_t n, std::uint64_t seed, Split split = Split::train) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> noise(0, 60);
  std::vector<ImageSample> samples(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    Image img({8, 8, 1});
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        img.at(y, x, 0) = static_cast<std::uint8_t>(((x < 4) == (label == 0) ? 180 : 0) + noise(rng));
    samples[i] = {std::move(img), label, i};
  }
  return {std::move(samples), 2, split};
}

nn::ModelSpec tiny_spec() {
  nn::ModelSpec s;
  s.height = 8;
  s.width = 8;
  s.num_classes = 2;
  s.base_width = 4;
  return s;
}

TrainOptions quiet(std::uint64_t seed) {
  TrainOptions o;
  o.seeding = set_deterministic(seed);
  o.write_artifacts = false;
  return o;
}

} // namespace

TEST(TrainSchedule, StepDecayAtMilestones) {
  TrainSchedule s;
  s.lr = 0.1;
  s.gamma = 0.1;
  s.milestones = {150, 180};
  s.epochs = 200;
  EXPECT_DOUBLE_EQ(s.lr_at_epoch(0), 0.1);
  EXPECT_DOUBLE_EQ(s.lr_at_epoch(149), 0.1);
  EXPECT_NEAR(s.lr_at_epoch(150), 0.01, 1e-15);
  EXPECT_NEAR(s.lr_at_epoch(179), 0.01, 1e-15);
  EXPECT_NEAR(s.lr_at_epoch(180), 0.001, 1e-15);
  EXPECT_NEAR(s.lr_at_epoch(199), 0.001, 1e-15);
}

TEST(TrainSchedule, JsonRoundTripUsesToolboxKeys) {
  const json j = json::parse(R"({"device":"GPU","CUDA_VISIBLE_DEVICES":"1","GPU_num":1,"benign_training":true,
    "batch_size":64,"num_workers":2,"lr":0.05,"momentum":0.8,"weight_decay":1e-4,"gamma":0.5,"schedule":[3,6],
    "epochs":8,"log_iteration_interval":10,"test_epoch_interval":2,"save_epoch_interval":4,"save_dir":"out",
    "experiment_name":"x"})");
  const auto s = TrainSchedule::from_json(j);
  EXPECT_EQ(s.to_json(), j);
  EXPECT_EQ(s.milestones, (std::vector<int>{3, 6}));
}

TEST(TrainSchedule, Validation) {
  EXPECT_THROW((void)TrainSchedule::from_json({{"lr", 0.1}, {"epochs", 5}, {"learning_rate", 1}}), ValidationError);
  EXPECT_THROW((void)TrainSchedule::from_json({{"epochs", 5}, {"schedule", {3, 2}}}), ValidationError);
  EXPECT_THROW((void)TrainSchedule::from_json({{"epochs", 5}, {"schedule", {5}}}), ValidationError);
  EXPECT_THROW((void)TrainSchedule::from_json({{"epochs", 5}, {"lr", 0}}), ValidationError);
  EXPECT_THROW((void)TrainSchedule::from_json({{"epochs", 5}, {"device", "TPU"}}), ValidationError);
  EXPECT_THROW((void)TrainSchedule::from_json({{"epochs", "five"}}), ValidationError);
  try {
    (void)TrainSchedule::from_json({{"epochs", 5}, {"GPU_num", 2}});
    FAIL();
  } catch (const UnsupportedError &e) {
    EXPECT_NE(std::string(e.what()).find("unsupported"), std::string::npos);
  }
  EXPECT_THROW((void)TestSchedule::from_json({{"metric", "BA"}, {"GPU_num", 4}}), UnsupportedError);
  EXPECT_THROW((void)TestSchedule::from_json({{"metrics", "BA"}}), ValidationError);
}

TEST(Train, ZeroEpochsLeavesModelUnchanged) {
  const auto data = halves_dataset(16, 1);
  nn::Model model(tiny_spec(), 3);
  const nn::Model before = model;
  const auto log = train(model, data, quick_schedule(0), quiet(1));
  EXPECT_TRUE(model.same_state(before));
  EXPECT_TRUE(log.iterations.empty());
}

TEST(Train, LearnsSeparableTask) {
  const auto data = halves_dataset(256, 2);
  const auto test = halves_dataset(64, 3, Split::test);
  nn::Model model(tiny_spec(), 4);
  const auto log = train(model, data, quick_schedule(4, 16, 0.05), quiet(2));
  EXPECT_EQ(benign_accuracy(model, test).value, 1.0);
  ASSERT_FALSE(log.iterations.empty());
  EXPECT_LT(log.iterations.back().loss, log.iterations.front().loss);
}

TEST(Train, SameSeedSameWeights) {
  auto data = halves_dataset(64, 5);
  data.set_chain({make_transform(RandomCrop{1})});
  data.set_seed(7);
  nn::Model a(tiny_spec(), 1), b(tiny_spec(), 1), c(tiny_spec(), 1);
  const auto la = train(a, data, quick_schedule(2), quiet(9));
  const auto lb = train(b, data, quick_schedule(2), quiet(9));
  (void)train(c, data, quick_schedule(2), quiet(10));
  EXPECT_TRUE(a.same_state(b));
  EXPECT_EQ(la.to_json(), lb.to_json());
  EXPECT_FALSE(a.same_state(c));
}

TEST(Train, WorkerCountDoesNotChangeResult) {
  auto data = halves_dataset(64, 6);
  data.set_chain({make_transform(RandomAffine{10.0, 0.1, 0.1, 0.9, 1.0})});
  data.set_seed(3);
  nn::Model a(tiny_spec(), 1), b(tiny_spec(), 1);
  auto s = quick_schedule(2);
  (void)train(a, data, s, quiet(4));
  s.num_workers = 4;
  (void)train(b, data, s, quiet(4));
  EXPECT_TRUE(a.same_state(b));
}

TEST(Train, OnlyTrainableLayersMove) {
  const auto data = halves_dataset(32, 7);
  nn::Model model(tiny_spec(), 2);
  model.set_trainable({"fc1", "classifier"});
  const nn::Model before = model;
  (void)train(model, data, quick_schedule(1), quiet(1));
  for (const auto &name : {"conv1.weight", "conv1.bias", "conv2.weight"}) {
    const auto find = [&](const nn::Model &m) {
      for (const auto &r : m.state())
        if (r.name == name) return r.param->value;
      return std::vector<float>{};
    };
    EXPECT_EQ(find(model), find(before)) << name;
  }
  EXPECT_FALSE(model.same_state(before));
}

TEST(Train, FrozenResNetStagesKeepBatchNormBuffers) {
  auto data = halves_dataset(16, 13);
  nn::ModelSpec spec = tiny_spec();
  spec.architecture = "resnet-18";
  nn::Model model(spec, 3);
  model.set_trainable({"layer4.1", "linear"});
  const nn::Model before = model;
  (void)train(model, data, quick_schedule(1, 8), quiet(1));
  const auto a = model.state(), b = before.state();
  bool head_moved = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool head = a[i].name.rfind("layer4.1", 0) == 0 || a[i].name.rfind("linear", 0) == 0;
    if (head)
      head_moved |= a[i].param->value != b[i].param->value;
    else
      EXPECT_EQ(a[i].param->value, b[i].param->value) << a[i].name;
  }
  EXPECT_TRUE(head_moved);
}

TEST(Train, WritesCheckpointsAndTimestampFreeMetrics) {
  TempDir dir("train_artifacts");
  const auto data = halves_dataset(32, 8);
  auto s = quick_schedule(2);
  s.save_epoch_interval = 1;
  s.save_dir = dir.path().string();
  s.experiment_name = "exp";
  TrainOptions opts;
  opts.seeding = set_deterministic(5);
  opts.periodic_tests.push_back({"BA", [&](nn::Model &m) { return benign_accuracy(m, data).value; }});
  nn::Model model(tiny_spec(), 5);
  const auto log = train(model, data, s, opts);
  const auto exp = dir.path() / "exp";
  EXPECT_TRUE(std::filesystem::exists(exp / "checkpoints" / "ckpt_epoch_1.bbx"));
  EXPECT_TRUE(std::filesystem::exists(exp / "checkpoints" / "ckpt_epoch_2.bbx"));
  EXPECT_EQ(log.checkpoints.size(), 2u);
  EXPECT_EQ(log.tests.size(), 2u);
  const json metrics = read_json(exp / "metrics.json");
  EXPECT_EQ(metrics.at("seed"), 5);
  EXPECT_EQ(metrics.at("epoch_lr").size(), 2u);
  EXPECT_EQ(slurp(exp / "metrics.json").find("timestamp"), std::string::npos);
  EXPECT_NE(slurp(exp / "log.txt").find("epoch 1 iteration"), std::string::npos);
  EXPECT_TRUE(nn::load_checkpoint(exp / "checkpoints" / "ckpt_epoch_2.bbx").model.same_state(model));
}

TEST(Train, GpuRequestFallsBackWithNote) {
  const auto data = halves_dataset(16, 9);
  auto s = quick_schedule(1);
  s.device = Device::GPU;
  nn::Model model(tiny_spec(), 1);
  const auto log = train(model, data, s, quiet(1));
  ASSERT_EQ(log.notes.size(), 1u);
  EXPECT_NE(log.notes[0].find("running on CPU"), std::string::npos);
}

TEST(Evaluate, ReportsMergeIntoMetricsFile) {
  TempDir dir("evaluate");
  const auto data = halves_dataset(32, 10, Split::test);
  auto s = quick_schedule(1);
  s.save_dir = dir.path().string();
  s.experiment_name = "exp";
  nn::Model model(tiny_spec(), 1);
  TrainOptions opts;
  opts.seeding = set_deterministic(1);
  (void)train(model, halves_dataset(32, 11), s, opts);
  TestSchedule t;
  t.save_dir = s.save_dir;
  t.experiment_name = "exp";
  const auto report = evaluate(model, data, t);
  const json metrics = read_json(dir.path() / "exp" / "metrics.json");
  EXPECT_TRUE(metrics.contains("iterations"));
  ASSERT_EQ(metrics.at("reports").size(), 1u);
  EXPECT_EQ(metrics["reports"][0]["value"], report.value);
  EXPECT_EQ(metrics["reports"][0]["schedule"]["metric"], "BA");
  EXPECT_EQ(report.population, 32u);

  t.metric = "ASR";
  EXPECT_THROW((void)evaluate(model, data, t), ValidationError);
  t.metric = "Precision";
  EXPECT_THROW((void)evaluate(model, data, t), ValidationError);
}

TEST(Evaluate, PreprocessSeesPositions) {
  const auto data = halves_dataset(10, 12, Split::test);
  nn::Model model(tiny_spec(), 1);
  std::vector<std::size_t> seen;
  std::mutex lock;
  (void)predict(model, data, 3, 0, [&](FloatImage img, std::size_t pos) {
    std::scoped_lock guard(lock);
    seen.push_back(pos);
    return img;
  });
  std::vector<std::size_t> expected(10);
  std::iota(expected.begin(), expected.end(), std::size_t{0});
  EXPECT_EQ(seen, expected);
}
