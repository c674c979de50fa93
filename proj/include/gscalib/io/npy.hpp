// Lossless float dumps of rendered images in NPY v1.0 layout
// (magic \x93NUMPY, little-endian float32, C order, shape (H, W, 3)).
// See docs/formats.md.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gscalib/errors.hpp"
#include "gscalib/image.hpp"

namespace gscalib {

inline void write_npy(const std::string& path, const Image& img) {
  std::ostringstream dict;
  dict << "{'descr': '<f4', 'fortran_order': False, 'shape': (" << img.height() << ", "
       << img.width() << ", 3), }";
  std::string header = dict.str();
  // pad so that magic(6) + version(2) + len(2) + header is a multiple of 64
  const std::size_t base = 6 + 2 + 2;
  std::size_t padded = ((base + header.size() + 1 + 63) / 64) * 64 - base;
  header.resize(padded - 1, ' ');
  header.push_back('\n');

  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open for write: " + path);
  const unsigned char magic[8] = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
  f.write(reinterpret_cast<const char*>(magic), 8);
  const std::uint16_t len = static_cast<std::uint16_t>(header.size());
  f.write(reinterpret_cast<const char*>(&len), 2);
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  std::vector<float> data(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) data[i] = static_cast<float>(img.data()[i]);
  f.write(reinterpret_cast<const char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!f) throw Error("short write: " + path);
}

inline Image read_npy(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingFile(path);
  unsigned char magic[8];
  if (!f.read(reinterpret_cast<char*>(magic), 8) || magic[0] != 0x93 ||
      std::memcmp(magic + 1, "NUMPY", 5) != 0) {
    throw Error("not an npy file: " + path);
  }
  std::uint16_t len = 0;
  f.read(reinterpret_cast<char*>(&len), 2);
  std::string header(len, '\0');
  f.read(header.data(), len);
  if (header.find("'<f4'") == std::string::npos)
    throw Error("npy: expected little-endian float32: " + path);
  if (header.find("True") != std::string::npos)
    throw Error("npy: expected C order: " + path);
  const auto open = header.find('(');
  const auto close = header.find(')');
  if (open == std::string::npos || close == std::string::npos)
    throw Error("npy: malformed shape: " + path);
  std::string shape = header.substr(open + 1, close - open - 1);
  for (char& c : shape)
    if (c == ',') c = ' ';
  std::istringstream ss(shape);
  long h = 0, w = 0, ch = 0;
  ss >> h >> w >> ch;
  if (h <= 0 || w <= 0 || ch != 3) throw Error("npy: expected (H, W, 3): " + path);

  std::vector<float> data(static_cast<std::size_t>(h) * w * 3);
  if (!f.read(reinterpret_cast<char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)))) {
    throw Error("npy: truncated data: " + path);
  }
  Image img(static_cast<int>(h), static_cast<int>(w));
  for (std::size_t i = 0; i < data.size(); ++i) img.data()[i] = data[i];
  return img;
}

}  // namespace gscalib
