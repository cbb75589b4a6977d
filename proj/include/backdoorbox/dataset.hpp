#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "backdoorbox/error.hpp"
#include "backdoorbox/image.hpp"
#include "backdoorbox/netpbm.hpp"
#include "backdoorbox/rng.hpp"
#include "backdoorbox/transforms.hpp"

namespace bbox {

struct ImageSample {
  Image pixels;
  int label = 0;
  std::size_t index = 0; ///< stable position in the parent dataset
};

enum class Split { train, test };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

/// One materialized item as seen by training/evaluation.
struct Example {
  FloatImage pixels;
  int label = 0;          ///< label used for training (relabeled when poisoned)
  int original_label = 0; ///< ground-truth label of the underlying image
  std::size_t index = 0;  ///< stable source index
  bool poisoned = false;
};

/// Trigger insertion applied on top of a dataset's transform chain.
struct PoisonOverlay {
  std::vector<bool> poisoned; ///< indexed by source index
  Transform trigger;
  std::size_t insert_index = 0;
  int y_target = 0;
};

/// Ordered, immutable sample storage plus the per-sample transform chain
/// applied at access time. Copies share storage.
class Dataset {
public:
  Dataset() = default;
  Dataset(std::vector<ImageSample> samples, int num_classes, Split split,
          std::vector<std::string> class_names = {})
      : num_classes_(num_classes), split_(split) {
    if (num_classes <= 0) throw ValidationError("num_classes", "must be positive");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      samples[i].index = i;
      if (samples[i].pixels.shape() != samples.front().pixels.shape())
        throw ShapeError("sample " + std::to_string(i) + " has shape " +
                         samples[i].pixels.shape().str() + ", dataset shape is " +
                         samples.front().pixels.shape().str());
      if (samples[i].label < 0 || samples[i].label >= num_classes)
        throw ValidationError("label", "sample " + std::to_string(i) + " has label " +
                                           std::to_string(samples[i].label) + " outside [0," +
                                           std::to_string(num_classes) + ")");
    }
    if (class_names.empty())
      for (int k = 0; k < num_classes; ++k) class_names.push_back(std::to_string(k));
    if (static_cast<int>(class_names.size()) != num_classes)
      throw ValidationError("class_names", "count differs from num_classes");
    class_names_ = std::move(class_names);
    view_.resize(samples.size());
    std::iota(view_.begin(), view_.end(), std::size_t{0});
    storage_ = std::make_shared<const std::vector<ImageSample>>(std::move(samples));
  }

  [[nodiscard]] std::size_t size() const { return view_.size(); }
  [[nodiscard]] bool empty() const { return view_.empty(); }
  [[nodiscard]] int num_classes() const { return num_classes_; }
  [[nodiscard]] Split split() const { return split_; }
  [[nodiscard]] const std::vector<std::string> &class_names() const { return class_names_; }
  [[nodiscard]] Shape shape() const {
    return storage_ && !storage_->empty() ? storage_->front().pixels.shape() : Shape{};
  }

  /// Raw stored sample at view position i.
  [[nodiscard]] const ImageSample &sample(std::size_t i) const { return (*storage_)[view_.at(i)]; }
  [[nodiscard]] int label(std::size_t i) const { return sample(i).label; }

  [[nodiscard]] const TransformChain &chain() const { return chain_; }
  void set_chain(TransformChain chain) { chain_ = std::move(chain); }

  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t seed) { seed_ = seed; }

  [[nodiscard]] const std::shared_ptr<const PoisonOverlay> &overlay() const { return overlay_; }

  [[nodiscard]] bool is_poisoned(std::size_t i) const {
    return overlay_ && overlay_->poisoned.at(sample(i).index);
  }

  /// Materializes item i. Randomness is seeded from (dataset seed, source
  /// index, epoch), so iteration order and parallelism cannot change results.
  [[nodiscard]] Example at(std::size_t i, std::uint64_t epoch = 0) const {
    const ImageSample &s = sample(i);
    Rng rng = make_rng(seed_, Stream::sample, {s.index, epoch});
    Example ex;
    ex.index = s.index;
    ex.original_label = s.label;
    ex.label = s.label;
    FloatImage img = to_float(s.pixels);
    if (is_poisoned(i)) {
      const std::size_t j = overlay_->insert_index;
      std::span<const Transform> all(chain_);
      img = run_chain(all.subspan(0, j), std::move(img), rng);
      img = overlay_->trigger.apply(std::move(img), rng);
      clamp_unit(img);
      img = run_chain(all.subspan(j), std::move(img), rng);
      ex.label = overlay_->y_target;
      ex.poisoned = true;
    } else {
      img = run_chain(chain_, std::move(img), rng);
    }
    ex.pixels = std::move(img);
    return ex;
  }

  /// View restricted to the given positions (in order).
  [[nodiscard]] Dataset subset(std::span<const std::size_t> positions) const {
    Dataset out = *this;
    out.view_.clear();
    out.view_.reserve(positions.size());
    for (auto p : positions) out.view_.push_back(view_.at(p));
    return out;
  }

  [[nodiscard]] Dataset with_overlay(std::shared_ptr<const PoisonOverlay> overlay) const {
    if (overlay && overlay->poisoned.size() != storage_size())
      throw ShapeError("poison mask covers " + std::to_string(overlay->poisoned.size()) +
                       " samples, dataset storage holds " + std::to_string(storage_size()));
    Dataset out = *this;
    out.overlay_ = std::move(overlay);
    return out;
  }

  [[nodiscard]] std::size_t storage_size() const { return storage_ ? storage_->size() : 0; }

private:
  std::shared_ptr<const std::vector<ImageSample>> storage_ =
      std::make_shared<const std::vector<ImageSample>>();
  std::vector<std::size_t> view_;
  int num_classes_ = 0;
  Split split_ = Split::train;
  std::vector<std::string> class_names_;
  TransformChain chain_;
  std::uint64_t seed_ = 0;
  std::shared_ptr<const PoisonOverlay> overlay_;
};

struct DatasetPair {
  Dataset train;
  Dataset test;
};

// ---------------------------------------------------------------------------
// Loaders

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const unsigned char *p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
         (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

} // namespace detail

/// MNIST-style IDX pair (uncompressed idx3-ubyte images, idx1-ubyte labels).
inline Dataset load_idx(const std::filesystem::path &images_path,
                        const std::filesystem::path &labels_path, Split split,
                        int num_classes = 10) {
  const auto images = detail::read_file(images_path);
  const auto labels = detail::read_file(labels_path);
  if (images.size() < 16 || detail::read_be32(images.data()) != 0x00000803)
    throw UnsupportedError(images_path.string() + " is not an idx3-ubyte image file");
  if (labels.size() < 8 || detail::read_be32(labels.data()) != 0x00000801)
    throw UnsupportedError(labels_path.string() + " is not an idx1-ubyte label file");
  const std::size_t count = detail::read_be32(images.data() + 4);
  const int rows = static_cast<int>(detail::read_be32(images.data() + 8));
  const int cols = static_cast<int>(detail::read_be32(images.data() + 12));
  if (detail::read_be32(labels.data() + 4) != count)
    throw UnsupportedError("image/label counts differ in idx pair");
  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  if (images.size() < 16 + count * pixels || labels.size() < 8 + count)
    throw IoError("truncated idx file");
  std::vector<ImageSample> samples(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto *src = images.data() + 16 + i * pixels;
    samples[i].pixels = Image({rows, cols, 1}, std::vector<std::uint8_t>(src, src + pixels));
    samples[i].label = labels[8 + i];
    samples[i].index = i;
  }
  return Dataset(std::move(samples), num_classes, split);
}

/// MNIST directory with the canonical four file names.
inline DatasetPair load_mnist(const std::filesystem::path &dir) {
  return {load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", Split::train),
          load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", Split::test)};
}

/// CIFAR-10 binary batches: records of 1 label byte + 3072 planar RGB bytes.
inline Dataset load_cifar_batches(std::span<const std::filesystem::path> files, Split split) {
  constexpr int side = 32;
  constexpr std::size_t plane = side * side;
  constexpr std::size_t record = 1 + 3 * plane;
  std::vector<ImageSample> samples;
  for (const auto &file : files) {
    const auto bytes = detail::read_file(file);
    if (bytes.size() % record != 0)
      throw UnsupportedError(file.string() + " is not a CIFAR-10 binary batch");
    for (std::size_t off = 0; off < bytes.size(); off += record) {
      ImageSample s;
      s.label = bytes[off];
      s.index = samples.size();
      s.pixels = Image({side, side, 3});
      for (std::size_t p = 0; p < plane; ++p)
        for (int c = 0; c < 3; ++c)
          s.pixels.data()[p * 3 + c] = bytes[off + 1 + c * plane + p];
      samples.push_back(std::move(s));
    }
  }
  return Dataset(std::move(samples), 10, split);
}

inline DatasetPair load_cifar10(const std::filesystem::path &dir) {
  std::vector<std::filesystem::path> train;
  for (int i = 1; i <= 5; ++i) train.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  const std::vector<std::filesystem::path> test{dir / "test_batch.bin"};
  return {load_cifar_batches(train, Split::train), load_cifar_batches(test, Split::test)};
}

/// Folder-per-class layout: root/<class>/<image>.{pgm,ppm}. Classes and files
/// are ordered lexicographically, which fixes sample indices.
inline Dataset load_folder(const std::filesystem::path &root, Split split) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError(root.string() + " is not a directory");
  std::vector<std::string> classes;
  for (const auto &entry : fs::directory_iterator(root))
    if (entry.is_directory()) classes.push_back(entry.path().filename().string());
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw UnsupportedError(root.string() + " has no class directories");
  std::vector<ImageSample> samples;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    std::vector<fs::path> files;
    for (const auto &entry : fs::directory_iterator(root / classes[k])) {
      const auto ext = entry.path().extension().string();
      if (entry.is_regular_file() && (ext == ".pgm" || ext == ".ppm")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto &f : files) {
      ImageSample s;
      s.pixels = read_netpbm(f);
      s.label = static_cast<int>(k);
      s.index = samples.size();
      samples.push_back(std::move(s));
    }
  }
  if (samples.empty()) throw UnsupportedError(root.string() + " contains no images");
  return Dataset(std::move(samples), static_cast<int>(classes.size()), split, classes);
}

/// Writes the dataset as materialized at epoch 0 in folder-per-class layout.
/// Files are named by source index; relabeled samples land in their new class.
inline void export_folder(const Dataset &data, const std::filesystem::path &root) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  for (const auto &name : data.class_names()) fs::create_directories(root / name);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Example ex = data.at(i, 0);
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu", ex.index);
    const auto ext = ex.pixels.channels() == 1 ? ".pgm" : ".ppm";
    write_netpbm(root / data.class_names()[ex.label] / (std::string(name) + ext),
                 to_bytes(ex.pixels));
  }
}

} // namespace bbox
