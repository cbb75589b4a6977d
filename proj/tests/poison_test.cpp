#include <gtest/gtest.h>

#include "support.hpp"

using namespace bbox;
using testing_support::random_dataset;
using testing_support::random_image;

namespace {

const Shape kGray{8, 8, 1};
const Shape kColor{6, 5, 3};

TriggerPattern uniform_trigger(Shape s, std::uint8_t p, float w) {
  TriggerPattern t;
  t.pattern = Image({s.height, s.width, 1}, p);
  t.weight = Raster<float>({s.height, s.width, 1}, w);
  return t;
}

} // namespace

TEST(SelectPoisonIndices, CountIsFloorOfRateTimesN) {
  const auto data = random_dataset(50, kGray, 10, 1);
  for (double rate : {0.0, 0.01, 0.05, 0.1, 0.333, 0.5, 0.99, 1.0}) {
    const auto idx = select_poison_indices(data, rate, 7);
    EXPECT_EQ(idx.size(), static_cast<std::size_t>(std::floor(rate * 50))) << rate;
    EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
    EXPECT_EQ(std::adjacent_find(idx.begin(), idx.end()), idx.end());
    for (auto i : idx) EXPECT_LT(i, 50u);
  }
}

TEST(SelectPoisonIndices, TenSamplesAtFivePercentIsEmpty) {
  EXPECT_TRUE(select_poison_indices(random_dataset(10, kGray, 10, 2), 0.05, 0).empty());
}

TEST(SelectPoisonIndices, LargeDatasetCount) {
  std::vector<ImageSample> samples(50000);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i].pixels = Image({1, 1, 1});
    samples[i].label = static_cast<int>(i % 10);
  }
  const Dataset data(std::move(samples), 10, Split::train);
  EXPECT_EQ(select_poison_indices(data, 0.05, 3).size(), 2500u);
}

TEST(SelectPoisonIndices, SameSeedSameSetDifferentSeedDiffers) {
  const auto data = random_dataset(200, kGray, 10, 3);
  EXPECT_EQ(select_poison_indices(data, 0.2, 11), select_poison_indices(data, 0.2, 11));
  EXPECT_NE(select_poison_indices(data, 0.2, 11), select_poison_indices(data, 0.2, 12));
}

TEST(SelectPoisonIndices, ExcludeTargetSkipsTargetClass) {
  const auto data = random_dataset(100, kGray, 10, 4);
  const auto idx = select_poison_indices(data, 0.5, 5, true, 3);
  EXPECT_EQ(idx.size(), 50u);
  for (auto i : idx) EXPECT_NE(data.label(i), 3);
}

TEST(SelectPoisonIndices, ExcludeTargetInsufficientEligible) {
  const auto data = random_dataset(10, kGray, 2, 5);
  try {
    (void)select_poison_indices(data, 0.9, 0, true, 0);
    FAIL() << "expected an error";
  } catch (const ValidationError &e) {
    EXPECT_NE(std::string(e.what()).find("insufficient eligible samples"), std::string::npos);
  }
}

TEST(SelectPoisonIndices, RejectsBadRateAndEmptyData) {
  const auto data = random_dataset(10, kGray, 2, 6);
  EXPECT_THROW((void)select_poison_indices(data, -0.1, 0), ValidationError);
  EXPECT_THROW((void)select_poison_indices(data, 1.1, 0), ValidationError);
  EXPECT_THROW((void)select_poison_indices(Dataset({}, 2, Split::train), 0.5, 0), ValidationError);
}

TEST(Stamp, ZeroWeightIsIdentity) {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 50; ++k) {
    ImageSample s{random_image(kColor, rng), 0, 0};
    EXPECT_EQ(stamp_patch(s, uniform_trigger(kColor, 77, 0.0f)).pixels, s.pixels);
  }
}

TEST(Stamp, UnitWeightIsPattern) {
  std::mt19937_64 rng(2);
  for (int k = 0; k < 50; ++k) {
    ImageSample s{random_image(kColor, rng), 0, 0};
    const auto out = stamp_patch(s, uniform_trigger(kColor, 201, 1.0f)).pixels;
    for (auto v : out.data()) EXPECT_EQ(v, 201);
  }
}

TEST(Stamp, FractionalBlend) {
  ImageSample s{Image(kGray, 100), 0, 0};
  const auto out = stamp_patch(s, uniform_trigger(kGray, 200, 0.1f)).pixels;
  for (auto v : out.data()) EXPECT_EQ(v, 110);
}

TEST(Stamp, CornerPatchTouchesOnlyNinePixels) {
  std::mt19937_64 rng(3);
  const Shape s{28, 28, 1};
  ImageSample in{random_image(s, rng), 4, 0};
  const auto out = stamp_patch(in, TriggerPattern::corner_patch(s)).pixels;
  int changed_region = 0;
  for (int y = 0; y < 28; ++y)
    for (int x = 0; x < 28; ++x) {
      if (y >= 25 && x >= 25) {
        EXPECT_EQ(out.at(y, x, 0), 255);
        ++changed_region;
      } else {
        EXPECT_EQ(out.at(y, x, 0), in.pixels.at(y, x, 0));
      }
    }
  EXPECT_EQ(changed_region, 9);
}

TEST(Stamp, SingleChannelPatternBroadcastsOverChannels) {
  std::mt19937_64 rng(4);
  ImageSample in{random_image(kColor, rng), 0, 0};
  const auto out = stamp_patch(in, TriggerPattern::corner_patch(kColor, 2, 10)).pixels;
  for (int c = 0; c < 3; ++c) EXPECT_EQ(out.at(5, 4, c), 10);
}

TEST(Stamp, BinaryWeightIsIdempotent) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 100; ++k) {
    TriggerPattern t;
    t.pattern = random_image({kColor.height, kColor.width, 3}, rng);
    t.weight = Raster<float>({kColor.height, kColor.width, 1});
    for (auto &w : t.weight.data()) w = static_cast<float>(rng() % 2);
    ImageSample in{random_image(kColor, rng), 0, 0};
    const auto once = stamp_patch(in, t);
    EXPECT_EQ(stamp_patch(once, t).pixels, once.pixels);
  }
}

TEST(Stamp, ShapeMismatchNamesShapes) {
  ImageSample in{Image(kGray), 0, 0};
  try {
    (void)stamp_patch(in, TriggerPattern::corner_patch({5, 5, 1}));
    FAIL() << "expected a shape error";
  } catch (const ShapeError &e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("8x8x1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("5x5x1"), std::string::npos) << msg;
  }
}

TEST(Stamp, RejectsOutOfRangeWeight) {
  EXPECT_THROW(uniform_trigger(kGray, 0, 1.5f).validate(kGray), ValidationError);
  EXPECT_THROW((void)TriggerPattern::blended(Image(kGray), 2.0f), ValidationError);
}

TEST(Quantize, RoundsHalfAwayFromZero) {
  EXPECT_EQ(quantize(110.5f / 255.0f), 111);
  EXPECT_EQ(quantize(-0.2f), 0);
  EXPECT_EQ(quantize(1.3f), 255);
}

namespace {

/// Adds `delta` to every pixel; deterministic so compositions are comparable.
Transform offset_transform(float delta) {
  Transform t;
  t.name = "offset";
  t.apply = [delta](FloatImage img, Rng &) {
    for (auto &v : img.data()) v += delta;
    return img;
  };
  return t;
}

/// Multiplies by a random factor so the RNG stream is consumed.
Transform random_scale_transform() {
  Transform t;
  t.name = "scale";
  t.apply = [](FloatImage img, Rng &rng) {
    const float f = static_cast<float>(uniform_real(rng, 0.5, 1.0));
    for (auto &v : img.data()) v *= f;
    return img;
  };
  return t;
}

} // namespace

TEST(BuildPoisonedDataset, RelabelsOnlySelectedSamples) {
  const auto train = random_dataset(100, kGray, 10, 7);
  const auto test = random_dataset(30, kGray, 10, 8, Split::test);
  PoisonPlan plan = make_plan(train, 1, 0.2, 9);
  const auto trigger = TriggerPattern::corner_patch(kGray);
  const auto out = build_poisoned_dataset(train, test, plan, make_stamp_transform(trigger),
                                          {"BadNets", json::object(), 9});
  ASSERT_EQ(out.train.size(), 100u);
  std::set<std::size_t> chosen(plan.poisoned_indices.begin(), plan.poisoned_indices.end());
  for (std::size_t i = 0; i < 100; ++i) {
    const auto ex = out.train.at(i);
    const auto benign = train.at(i);
    if (chosen.contains(i)) {
      EXPECT_TRUE(ex.poisoned);
      EXPECT_EQ(ex.label, 1);
      EXPECT_EQ(ex.original_label, benign.label);
      EXPECT_EQ(to_bytes(ex.pixels), stamp_patch(train.sample(i), trigger).pixels);
    } else {
      EXPECT_FALSE(ex.poisoned);
      EXPECT_EQ(ex.label, benign.label);
      EXPECT_EQ(ex.pixels, benign.pixels);
    }
  }
}

TEST(BuildPoisonedDataset, TestSplitExcludesTargetAndIsFullyTriggered) {
  const auto train = random_dataset(40, kGray, 4, 10);
  const auto test = random_dataset(40, kGray, 4, 11, Split::test);
  const auto out = build_poisoned_dataset(train, test, make_plan(train, 2, 0.0, 0),
                                          make_stamp_transform(TriggerPattern::corner_patch(kGray)),
                                          {"BadNets", json::object(), 0});
  EXPECT_EQ(out.test.size(), 30u);
  for (std::size_t i = 0; i < out.test.size(); ++i) {
    const auto ex = out.test.at(i);
    EXPECT_TRUE(ex.poisoned);
    EXPECT_EQ(ex.label, 2);
    EXPECT_NE(ex.original_label, 2);
  }
  for (std::size_t i = 0; i < train.size(); ++i) EXPECT_EQ(out.train.at(i).pixels, train.at(i).pixels);
  EXPECT_EQ(out.manifest.test_original_labels.size(), 30u);
}

TEST(BuildPoisonedDataset, InsertIndexMatchesExplicitComposition) {
  auto train = random_dataset(20, kGray, 2, 12);
  auto test = random_dataset(10, kGray, 2, 13, Split::test);
  const TransformChain chain{offset_transform(0.05f), random_scale_transform(), offset_transform(-0.1f)};
  train.set_chain(chain);
  test.set_chain(chain);
  train.set_seed(99);
  const auto trigger = TriggerPattern::blended(Image(kGray, 180), 0.3f);
  const Transform op = make_stamp_transform(trigger);
  for (std::size_t j = 0; j <= chain.size(); ++j) {
    PoisonPlan plan = make_plan(train, 0, 1.0, 1);
    plan.train_insert_index = j;
    const auto out = build_poisoned_dataset(train, test, plan, op, {"Blended", json::object(), 1});
    for (std::size_t i = 0; i < train.size(); ++i) {
      Rng rng = make_rng(99, Stream::sample, {i, 3});
      FloatImage img = to_float(train.sample(i).pixels);
      std::span<const Transform> all(chain);
      img = run_chain(all.subspan(0, j), img, rng);
      img = op.apply(img, rng);
      clamp_unit(img);
      img = run_chain(all.subspan(j), img, rng);
      EXPECT_EQ(out.train.at(i, 3).pixels, img) << "j=" << j << " i=" << i;
    }
  }
}

TEST(BuildPoisonedDataset, EndOfChainWithEmptyChainMatches) {
  const auto train = random_dataset(20, kGray, 2, 14);
  const auto test = random_dataset(10, kGray, 2, 15, Split::test);
  PoisonPlan a = make_plan(train, 1, 0.5, 2);
  PoisonPlan b = a;
  b.train_insert_index = 0;
  const Transform op = make_stamp_transform(TriggerPattern::corner_patch(kGray));
  const auto pa = build_poisoned_dataset(train, test, a, op, {"BadNets", json::object(), 2});
  const auto pb = build_poisoned_dataset(train, test, b, op, {"BadNets", json::object(), 2});
  for (std::size_t i = 0; i < train.size(); ++i) EXPECT_EQ(pa.train.at(i).pixels, pb.train.at(i).pixels);
}

TEST(BuildPoisonedDataset, InsertIndexOutOfRange) {
  const auto train = random_dataset(20, kGray, 2, 16);
  const auto test = random_dataset(10, kGray, 2, 17, Split::test);
  PoisonPlan plan = make_plan(train, 1, 0.5, 2);
  plan.train_insert_index = 1;
  EXPECT_THROW((void)build_poisoned_dataset(train, test, plan,
                                            make_stamp_transform(TriggerPattern::corner_patch(kGray)),
                                            {"BadNets", json::object(), 2}),
               ValidationError);
}

TEST(PoisonManifest, RoundTripsThroughJson) {
  PoisonManifest m;
  m.poisoned_indices = {1, 5, 9};
  m.y_target = 3;
  m.trigger = {"WaNet", {{"grid_size", 4}, {"strength", 0.5}}, 123456789012345ULL};
  m.original_labels = {0, 2, 7};
  m.test_indices = {0, 1};
  m.test_original_labels = {4, 5};
  const json j = m.to_json();
  for (const char *key : {"poisoned_indices", "y_target", "trigger", "original_labels"}) EXPECT_TRUE(j.contains(key));
  EXPECT_EQ(j["trigger"]["type"], "WaNet");
  EXPECT_EQ(PoisonManifest::from_json(json::parse(j.dump())), m);
}

TEST(ExportPoisoned, WritesFolderLayoutAndManifest) {
  testing_support::TempDir dir("export");
  const auto train = random_dataset(12, {4, 4, 1}, 3, 18);
  const auto test = random_dataset(6, {4, 4, 1}, 3, 19, Split::test);
  const auto out = build_poisoned_dataset(train, test, make_plan(train, 0, 0.25, 3),
                                          make_stamp_transform(TriggerPattern::corner_patch({4, 4, 1}, 2)),
                                          {"BadNets", {{"patch_size", 2}}, 3});
  export_poisoned(out, dir.path());
  EXPECT_EQ(PoisonManifest::from_json(read_json(dir.path() / "manifest.json")), out.manifest);
  const auto loaded = load_folder(dir.path() / "train", Split::train);
  ASSERT_EQ(loaded.size(), 12u);
  const auto poisoned_zero = std::count(out.manifest.original_labels.begin(), out.manifest.original_labels.end(), 0);
  std::size_t in_target = 0;
  for (std::size_t i = 0; i < loaded.size(); ++i) in_target += loaded.label(i) == 0;
  EXPECT_EQ(in_target, 4u - poisoned_zero + out.manifest.poisoned_indices.size());
  char name[32];
  const std::size_t first = out.manifest.poisoned_indices.front();
  std::snprintf(name, sizeof(name), "%06zu.pgm", first);
  EXPECT_EQ(read_netpbm(dir.path() / "train" / "0" / name),
            stamp_patch(train.sample(first), TriggerPattern::corner_patch({4, 4, 1}, 2)).pixels);
}
