// Dense H x W x 3 image buffer, values nominally in [0, 1], stored
// row-major with interleaved channels. Double precision: the loss
// gradients are checked against finite differences at 1e-5 steps, which
// float buffers cannot resolve.

#pragma once

#include <cstddef>
#include <vector>

#include "gscalib/errors.hpp"

namespace gscalib {

class Image {
 public:
  Image() = default;
  Image(int height, int width, double fill = 0.0)
      : height_(height), width_(width),
        data_(static_cast<std::size_t>(height) * width * 3, fill) {}

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int y, int x, int c) {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c];
  }
  double at(int y, int x, int c) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Image& o) const {
    return height_ == o.height_ && width_ == o.width_;
  }

  /// 8-bit quantization used for PNG output; round half away from zero.
  std::vector<unsigned char> to_bytes() const {
    std::vector<unsigned char> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) {
      double v = data_[i];
      v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      out[i] = static_cast<unsigned char>(v * 255.0 + 0.5);
    }
    return out;
  }

  static Image from_bytes(int height, int width, const unsigned char* bytes) {
    Image img(height, width);
    const std::size_t n = img.size();
    for (std::size_t i = 0; i < n; ++i) img.data_[i] = bytes[i] / 255.0;
    return img;
  }

  /// Quantize through 8 bits in place (what a PNG round trip would do).
  Image quantized() const {
    const auto bytes = to_bytes();
    return from_bytes(height_, width_, bytes.data());
  }

  bool operator==(const Image& o) const {
    return height_ == o.height_ && width_ == o.width_ && data_ == o.data_;
  }

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

inline void require_same_shape(const Image& a, const Image& b) {
  if (!a.same_shape(b)) {
    throw ShapeMismatch("image shapes differ: " + std::to_string(a.width()) + "x" +
                        std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                        std::to_string(b.height()));
  }
}

}  // namespace gscalib
