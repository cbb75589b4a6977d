#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "backdoorbox/backdoorbox.hpp"

namespace testing_support {

inline bbox::Image random_image(bbox::Shape shape, std::mt19937_64 &rng) {
  bbox::Image img(shape);
  std::uniform_int_distribution<int> byte(0, 255);
  for (auto &v : img.data()) v = static_cast<std::uint8_t>(byte(rng));
  return img;
}

/// Random images with labels cycling through num_classes.
inline bbox::Dataset random_dataset(std::size_t n, bbox::Shape shape, int num_classes, std::uint64_t seed,
                                    bbox::Split split = bbox::Split::train) {
  std::mt19937_64 rng(seed);
  std::vector<bbox::ImageSample> samples(n);
  for (std::size_t i = 0; i < n; ++i) {
    samples[i].pixels = random_image(shape, rng);
    samples[i].label = static_cast<int>(i % num_classes);
  }
  return {std::move(samples), num_classes, split};
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string &name) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("bbox_" + name + "_" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;
  [[nodiscard]] const std::filesystem::path &path() const { return path_; }

private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// Relative path -> file bytes for every regular file under root.
inline std::map<std::string, std::string> tree_contents(const std::filesystem::path &root) {
  std::map<std::string, std::string> out;
  for (const auto &e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[std::filesystem::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

inline bbox::TrainSchedule quick_schedule(int epochs, int batch_size = 32, double lr = 0.01) {
  bbox::TrainSchedule s;
  s.batch_size = batch_size;
  s.lr = lr;
  s.epochs = epochs;
  s.milestones = {};
  s.log_iteration_interval = 1;
  s.test_epoch_interval = 1;
  s.save_epoch_interval = epochs > 0 ? epochs : 1;
  return s;
}

} // namespace testing_support
