#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "backdoorbox/error.hpp"
#include "backdoorbox/nn/model.hpp"

namespace bbox::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian floats");

// Layout: 8-byte magic, u64 header length, JSON header (architecture,
// tensor table, channel masks, schedule snapshot), then raw float32 values in
// header order.
inline constexpr char checkpoint_magic[9] = "BBXCKPT1";

struct Checkpoint {
  Model model;
  json schedule;
};

inline void save_checkpoint(const std::filesystem::path &path, const Model &model,
                            const json &schedule = json::object()) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  json header;
  header["architecture"] = model.spec().to_json();
  header["schedule"] = schedule;
  header["masks"] = model.channel_masks();
  json tensors = json::array();
  for (const auto &r : model.state())
    tensors.push_back({{"name", r.name}, {"shape", r.param->shape}, {"count", r.param->value.size()}});
  header["tensors"] = tensors;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(checkpoint_magic, 8);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char *>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto &r : model.state())
    out.write(reinterpret_cast<const char *>(r.param->value.data()),
              static_cast<std::streamsize>(r.param->value.size() * sizeof(float)));
  if (!out) throw IoError("failed writing " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, checkpoint_magic, 8) != 0)
    throw IoError(path.string() + " is not a checkpoint");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char *>(&len), sizeof(len));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError(path.string() + ": truncated header");
  const json header = json::parse(text);

  Checkpoint ck{Model(ModelSpec::from_json(header.at("architecture")), 0), header.value("schedule", json::object())};
  auto state = ck.model.state();
  const auto &tensors = header.at("tensors");
  if (tensors.size() != state.size())
    throw IoError(path.string() + ": tensor table does not match the architecture");
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (tensors[i].at("name").get<std::string>() != state[i].name ||
        tensors[i].at("count").get<std::size_t>() != state[i].param->value.size())
      throw IoError(path.string() + ": unexpected tensor '" + tensors[i].at("name").get<std::string>() + "'");
    auto &v = state[i].param->value;
    in.read(reinterpret_cast<char *>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
    if (!in) throw IoError(path.string() + ": truncated tensor data");
  }
  const json masks = header.value("masks", json::object());
  for (const auto &[name, mask] : masks.items())
    ck.model.set_channel_mask(name, mask.get<std::vector<float>>());
  return ck;
}

} // namespace bbox::nn
