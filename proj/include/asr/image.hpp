#pragma once

#include <algorithm>
#include <cassert>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "asr/core.hpp"

namespace asr {

// Row-major H x W grid.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int height, int width, const T& fill = T{})
      : h_(height), w_(width), data_(static_cast<size_t>(height) * width, fill) {}

  int height() const { return h_; }
  int width() const { return w_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& at(int y, int x) { return data_[static_cast<size_t>(y) * w_ + x]; }
  const T& at(int y, int x) const { return data_[static_cast<size_t>(y) * w_ + x]; }
  T& operator[](size_t i) { return data_[i]; }
  const T& operator[](size_t i) const { return data_[i]; }

  bool inside(int y, int x) const { return y >= 0 && y < h_ && x >= 0 && x < w_; }

  void fill(const T& v) { std::fill(data_.begin(), data_.end(), v); }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

 private:
  int h_ = 0;
  int w_ = 0;
  std::vector<T> data_;
};

using ImageD = Image<double>;
using ImageV3 = Image<Vec3>;

inline uint8_t to_byte(double v) {
  return static_cast<uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
}

// Binary PPM, values expected in [0,1].
inline bool write_ppm(const std::string& path, const ImageV3& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) return false;
  f << "P6\n" << img.width() << " " << img.height() << "\n255\n";
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const Vec3& c = img.at(y, x);
      const uint8_t px[3] = {to_byte(c.x()), to_byte(c.y()), to_byte(c.z())};
      f.write(reinterpret_cast<const char*>(px), 3);
    }
  return static_cast<bool>(f);
}

// Binary PGM scaled by 1/scale; values below zero clamp to black.
inline bool write_pgm(const std::string& path, const ImageD& img, double scale) {
  std::ofstream f(path, std::ios::binary);
  if (!f) return false;
  f << "P5\n" << img.width() << " " << img.height() << "\n255\n";
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const uint8_t v = to_byte(img.at(y, x) / scale);
      f.write(reinterpret_cast<const char*>(&v), 1);
    }
  return static_cast<bool>(f);
}

}  // namespace asr
