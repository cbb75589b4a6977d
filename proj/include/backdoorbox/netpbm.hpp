#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "backdoorbox/error.hpp"
#include "backdoorbox/image.hpp"

namespace bbox {

/// Binary PGM (P5, one channel) and PPM (P6, three channels), maxval 255.
inline void write_netpbm(const std::filesystem::path &path, const Image &img) {
  if (img.channels() != 1 && img.channels() != 3)
    throw UnsupportedError("netpbm export needs 1 or 3 channels, got " +
                           std::to_string(img.channels()));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << (img.channels() == 1 ? "P5" : "P6") << '\n'
      << img.width() << ' ' << img.height() << "\n255\n";
  out.write(reinterpret_cast<const char *>(img.data().data()),
            static_cast<std::streamsize>(img.data().size()));
  if (!out) throw IoError("failed writing " + path.string());
}

namespace detail {

inline int read_header_int(std::istream &in, const std::string &file) {
  int value = -1;
  for (;;) {
    in >> std::ws;
    if (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      continue;
    }
    break;
  }
  if (!(in >> value)) throw IoError("malformed netpbm header in " + file);
  return value;
}

} // namespace detail

inline Image read_netpbm(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  in >> magic;
  int channels = 0;
  if (magic == "P5")
    channels = 1;
  else if (magic == "P6")
    channels = 3;
  else
    throw UnsupportedError(path.string() + ": only binary PGM (P5) / PPM (P6) are supported");
  const int width = detail::read_header_int(in, path.string());
  const int height = detail::read_header_int(in, path.string());
  const int maxval = detail::read_header_int(in, path.string());
  if (width <= 0 || height <= 0) throw IoError(path.string() + ": bad dimensions");
  if (maxval != 255) throw UnsupportedError(path.string() + ": maxval must be 255");
  in.get(); // single whitespace byte before the raster
  Image img({height, width, channels});
  in.read(reinterpret_cast<char *>(img.data().data()),
          static_cast<std::streamsize>(img.data().size()));
  if (in.gcount() != static_cast<std::streamsize>(img.data().size()))
    throw IoError(path.string() + ": truncated raster");
  return img;
}

} // namespace bbox
