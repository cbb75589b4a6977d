#include <gtest/gtest.h>

#include "support.hpp"

using namespace bbox;
using testing_support::random_dataset;
using testing_support::random_image;
using testing_support::TempDir;

namespace {

void put_be32(std::vector<unsigned char> &out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>(v >> s));
}

void write_bytes(const std::filesystem::path &p, const std::vector<unsigned char> &bytes) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char *>(bytes.data()),
                                            static_cast<std::streamsize>(bytes.size()));
}

} // namespace

TEST(Netpbm, RoundTripsGrayAndColor) {
  TempDir dir("netpbm");
  std::mt19937_64 rng(1);
  for (Shape s : {Shape{7, 5, 1}, Shape{4, 9, 3}}) {
    const Image img = random_image(s, rng);
    const auto path = dir.path() / (s.channels == 1 ? "a.pgm" : "a.ppm");
    write_netpbm(path, img);
    EXPECT_EQ(read_netpbm(path), img);
  }
}

TEST(Netpbm, RejectsOtherFormats) {
  TempDir dir("netpbm_bad");
  std::ofstream(dir.path() / "x.pgm") << "P2\n2 2\n255\n0 0 0 0\n";
  EXPECT_THROW((void)read_netpbm(dir.path() / "x.pgm"), Error);
  EXPECT_THROW((void)read_netpbm(dir.path() / "missing.pgm"), Error);
}

TEST(Loaders, IdxPair) {
  TempDir dir("idx");
  std::vector<unsigned char> images, labels;
  put_be32(images, 0x803);
  put_be32(images, 3);
  put_be32(images, 2);
  put_be32(images, 2);
  for (int i = 0; i < 12; ++i) images.push_back(static_cast<unsigned char>(i * 10));
  put_be32(labels, 0x801);
  put_be32(labels, 3);
  labels.insert(labels.end(), {7, 0, 9});
  write_bytes(dir.path() / "train-images-idx3-ubyte", images);
  write_bytes(dir.path() / "train-labels-idx1-ubyte", labels);
  write_bytes(dir.path() / "t10k-images-idx3-ubyte", images);
  write_bytes(dir.path() / "t10k-labels-idx1-ubyte", labels);
  const auto pair = load_mnist(dir.path());
  ASSERT_EQ(pair.train.size(), 3u);
  EXPECT_EQ(pair.train.shape(), (Shape{2, 2, 1}));
  EXPECT_EQ(pair.train.label(0), 7);
  EXPECT_EQ(pair.train.label(2), 9);
  EXPECT_EQ(pair.train.sample(1).pixels.at(1, 0, 0), 60);
  EXPECT_EQ(pair.test.split(), Split::test);

  images[3] = 0x04;
  write_bytes(dir.path() / "bad", images);
  EXPECT_THROW((void)load_idx(dir.path() / "bad", dir.path() / "train-labels-idx1-ubyte", Split::train),
               UnsupportedError);
}

TEST(Loaders, CifarBatchIsPlanarRgb) {
  TempDir dir("cifar");
  std::vector<unsigned char> bytes;
  for (int r = 0; r < 2; ++r) {
    bytes.push_back(static_cast<unsigned char>(r + 3));
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < 1024; ++p) bytes.push_back(static_cast<unsigned char>((c * 50 + p + r) % 256));
  }
  write_bytes(dir.path() / "b.bin", bytes);
  const std::vector<std::filesystem::path> files{dir.path() / "b.bin"};
  const auto data = load_cifar_batches(files, Split::test);
  ASSERT_EQ(data.size(), 2u);
  EXPECT_EQ(data.shape(), (Shape{32, 32, 3}));
  EXPECT_EQ(data.label(1), 4);
  EXPECT_EQ(data.sample(0).pixels.at(0, 5, 2), (100 + 5) % 256);
  EXPECT_EQ(data.sample(1).pixels.at(1, 0, 1), (50 + 32 + 1) % 256);

  bytes.pop_back();
  write_bytes(dir.path() / "b.bin", bytes);
  EXPECT_THROW((void)load_cifar_batches(files, Split::test), UnsupportedError);
}

TEST(Loaders, FolderOrderIsLexicographic) {
  TempDir dir("folder");
  std::mt19937_64 rng(3);
  std::map<std::string, Image> written;
  for (const char *cls : {"zebra", "ant", "moose"})
    for (const char *file : {"b.pgm", "a.pgm", "c.pgm"}) {
      std::filesystem::create_directories(dir.path() / cls);
      const Image img = random_image({3, 3, 1}, rng);
      write_netpbm(dir.path() / cls / file, img);
      written[std::string(cls) + "/" + file] = img;
    }
  std::ofstream(dir.path() / "ant" / "notes.txt") << "ignored";
  const auto data = load_folder(dir.path(), Split::train);
  ASSERT_EQ(data.size(), 9u);
  EXPECT_EQ(data.class_names(), (std::vector<std::string>{"ant", "moose", "zebra"}));
  EXPECT_EQ(data.label(0), 0);
  EXPECT_EQ(data.label(8), 2);
  EXPECT_EQ(data.sample(0).pixels, written["ant/a.pgm"]);
  EXPECT_EQ(data.sample(5).pixels, written["moose/c.pgm"]);
  EXPECT_EQ(data.sample(6).index, 6u);
  EXPECT_THROW((void)load_folder(dir.path() / "nope", Split::train), IoError);
}

TEST(Dataset, RejectsMixedShapesAndBadLabels) {
  std::vector<ImageSample> a(2);
  a[0].pixels = Image({2, 2, 1});
  a[1].pixels = Image({3, 2, 1});
  EXPECT_THROW(Dataset(a, 2, Split::train), ShapeError);
  a[1].pixels = Image({2, 2, 1});
  a[1].label = 5;
  EXPECT_THROW(Dataset(a, 2, Split::train), ValidationError);
}

TEST(Dataset, SubsetKeepsSourceIndices) {
  const auto data = random_dataset(10, {2, 2, 1}, 2, 4);
  const std::vector<std::size_t> pos{7, 2};
  const auto sub = data.subset(pos);
  ASSERT_EQ(sub.size(), 2u);
  EXPECT_EQ(sub.at(0).index, 7u);
  EXPECT_EQ(sub.at(1).pixels, data.at(2).pixels);
}

TEST(Dataset, AccessIsDeterministicPerSeedIndexEpoch) {
  auto data = random_dataset(5, {8, 8, 1}, 2, 5);
  data.set_chain({make_transform(RandomAffine{20.0, 0.2, 0.2, 0.8, 1.0})});
  data.set_seed(1);
  EXPECT_EQ(data.at(3, 2).pixels, data.at(3, 2).pixels);
  bool differs = false;
  for (std::uint64_t e = 0; e < 5; ++e) differs |= data.at(3, e).pixels != data.at(3, e + 1).pixels;
  EXPECT_TRUE(differs);
}

TEST(Transforms, OutputsAreClampedToUnitRange) {
  Transform boost;
  boost.name = "boost";
  boost.apply = [](FloatImage img, Rng &) {
    for (auto &v : img.data()) v = v * 3.0f - 1.0f;
    return img;
  };
  std::mt19937_64 gen(6);
  Rng rng(0);
  const FloatImage out = run_chain(std::vector{boost}, to_float(random_image({5, 5, 1}, gen)), rng);
  for (float v : out.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Transforms, NeutralParametersAreIdentity) {
  std::mt19937_64 gen(7);
  const FloatImage img = to_float(random_image({9, 7, 3}, gen));
  EXPECT_EQ(apply_color_jitter(img, 1.0, 1.0), img);
  EXPECT_EQ(apply_affine(img, 0.0, 0, 0, 1.0), img);
  EXPECT_EQ(resize_bilinear(img, 9, 7), img);
  Rng rng(1);
  EXPECT_EQ(make_transform(RandomCrop{0}).apply(img, rng), img);
  EXPECT_EQ(make_transform(RandomHorizontalFlip{0.0}).apply(img, rng), img);
}

TEST(Transforms, AffineIntegerShift) {
  std::mt19937_64 gen(8);
  const FloatImage img = to_float(random_image({6, 6, 1}, gen));
  const FloatImage out = apply_affine(img, 0.0, 2, -1, 1.0);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) {
      const int sy = y + 1, sx = x - 2;
      const float expected = (sy >= 0 && sy < 6 && sx >= 0 && sx < 6) ? img.at(sy, sx, 0) : 0.0f;
      EXPECT_EQ(out.at(y, x, 0), expected);
    }
}

TEST(Transforms, JsonRoundTripAndValidation) {
  const json chain = json::parse(R"([{"type":"ColorJitter","brightness":0.2,"contrast":0.2},
    {"type":"RandomAffine","degrees":10,"translate":[0.1,0.1],"scale":[0.8,0.9]},
    {"type":"RandomHorizontalFlip","p":0.5},{"type":"RandomCrop","padding":4}])");
  const auto built = chain_from_json(chain);
  ASSERT_EQ(built.size(), 4u);
  for (std::size_t i = 0; i < built.size(); ++i) EXPECT_EQ(built[i].params, chain[i]);
  EXPECT_THROW((void)transform_spec_from_json({{"type", "Blur"}}), ValidationError);
  EXPECT_THROW((void)transform_spec_from_json({{"type", "ColorJitter"}, {"brightness", -1}}), ValidationError);
  EXPECT_THROW((void)transform_spec_from_json({{"type", "RandomAffine"}, {"scale", {0.5, 2.5}}}), ValidationError);
}

TEST(PhysicalAugmentation, StandardAndValidation) {
  const auto std_aug = PhysicalAugmentation::standard();
  EXPECT_NO_THROW(std_aug.validate());
  EXPECT_EQ(PhysicalAugmentation::from_json(std_aug.to_json()).to_json(), std_aug.to_json());
  PhysicalAugmentation flip{{RandomHorizontalFlip{0.5}}};
  EXPECT_THROW(flip.validate(), ValidationError);
  PhysicalAugmentation big{{RandomAffine{0, 0, 0, 0.5, 2.5}}};
  EXPECT_THROW(big.validate(), ValidationError);
}

TEST(SyntheticDigits, DeterministicBalancedAndVaried) {
  const auto a = make_synthetic_digits(40, 3, Split::train);
  const auto b = make_synthetic_digits(40, 3, Split::train);
  const auto t = make_synthetic_digits(40, 3, Split::test);
  ASSERT_EQ(a.size(), 40u);
  EXPECT_EQ(a.shape(), (Shape{28, 28, 1}));
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.sample(i).pixels, b.sample(i).pixels);
    EXPECT_EQ(a.label(i), static_cast<int>(i % 10));
  }
  EXPECT_NE(a.sample(0).pixels, a.sample(10).pixels);
  EXPECT_NE(a.sample(0).pixels, t.sample(0).pixels);
  // strokes stay inside the central box, leaving the corners dark
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.sample(i).pixels.at(27, 27, 0), 0);
}

TEST(Rng, DerivedStreamsAreIndependent) {
  EXPECT_NE(derive_seed(1, Stream::shuffle, {0}), derive_seed(1, Stream::init, {0}));
  EXPECT_NE(derive_seed(1, Stream::sample, {0, 1}), derive_seed(1, Stream::sample, {1, 0}));
  EXPECT_EQ(derive_seed(9, Stream::warp, {2}), derive_seed(9, Stream::warp, {2}));
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const int v = uniform_int(rng, 0, 4);
    EXPECT_GE(v, 0);
    EXPECT_LE(v, 4);
  }
}
