#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "incdet/geometry.hpp"
#include "incdet/tensor.hpp"

namespace incdet {

/// 8-bit RGB image, interleaved row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // 3 * width * height

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(3) * w * h, 0) {}

  std::uint8_t at(int x, int y, int ch) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + ch];
  }
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    rgb[i] = r;
    rgb[i + 1] = g;
    rgb[i + 2] = b;
  }
  double luma(int x, int y) const {
    return 0.299 * at(x, y, 0) + 0.587 * at(x, y, 1) + 0.114 * at(x, y, 2);
  }
};

/// Binary PPM (P6) writer.
inline void write_ppm(const Image& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.rgb.data()),
          static_cast<std::streamsize>(img.rgb.size()));
  if (!f) throw std::runtime_error("write_ppm: short write to " + path);
}

inline Image read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: not a P6 file: " + path);
  int w = 0, h = 0, maxval = 0;
  f >> w >> h >> maxval;
  if (!f || w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error("read_ppm: bad header in " + path);
  f.get();  // single whitespace after header
  Image img(w, h);
  f.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!f) throw std::runtime_error("read_ppm: truncated data in " + path);
  return img;
}

/// Integer crop clamped to image bounds. Returns an empty image when the box
/// misses the image entirely.
inline Image crop(const Image& img, const Box& box) {
  int x0 = std::max(0, static_cast<int>(std::floor(box.x_min)));
  int y0 = std::max(0, static_cast<int>(std::floor(box.y_min)));
  int x1 = std::min(img.width, static_cast<int>(std::ceil(box.x_max)));
  int y1 = std::min(img.height, static_cast<int>(std::ceil(box.y_max)));
  if (x1 <= x0 || y1 <= y0) return Image();
  Image out(x1 - x0, y1 - y0);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x)
      out.set(x - x0, y - y0, img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2));
  return out;
}

/// (3,H,W) tensor scaled to [0,1].
inline Tensor to_tensor(const Image& img) {
  Tensor t({3, img.height, img.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) t.at(c, y, x) = img.at(x, y, c) / 255.0;
  return t;
}

}  // namespace incdet
