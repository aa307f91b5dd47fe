// 8-bit grayscale / RGB rasters with PGM/PPM/PNG I/O.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mbtrack {

struct ImageGray {
  int width = 0, height = 0;
  std::vector<uint8_t> data;  // row-major

  ImageGray() = default;
  ImageGray(int w, int h, uint8_t fill = 0) : width(w), height(h), data(size_t(w) * h, fill) {}

  uint8_t at(int x, int y) const { return data[size_t(y) * width + x]; }
  uint8_t& at(int x, int y) { return data[size_t(y) * width + x]; }
  bool contains(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }

  // Bilinear sample at a continuous position; caller keeps (x, y) inside
  // [0, w-1] x [0, h-1].
  double sample(double x, double y) const;
};

struct ImageRGB {
  int width = 0, height = 0;
  std::vector<uint8_t> data;  // row-major, 3 bytes per pixel

  ImageRGB() = default;
  ImageRGB(int w, int h, uint8_t r = 0, uint8_t g = 0, uint8_t b = 0)
      : width(w), height(h), data(size_t(w) * h * 3) {
    for (size_t i = 0; i < data.size(); i += 3) {
      data[i] = r;
      data[i + 1] = g;
      data[i + 2] = b;
    }
  }

  const uint8_t* at(int x, int y) const { return &data[(size_t(y) * width + x) * 3]; }
  uint8_t* at(int x, int y) { return &data[(size_t(y) * width + x) * 3]; }
  bool contains(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
};

/// Rec.601 luma (0.299/0.587/0.114), rounded to nearest.
ImageGray to_gray(const ImageRGB& rgb);

// Format chosen by extension: .pgm/.ppm/.png. Loaders throw std::runtime_error
// with the offending file in the message.
ImageGray load_gray(const std::string& path);
ImageRGB load_rgb(const std::string& path);
void save_gray(const ImageGray& img, const std::string& path);
void save_rgb(const ImageRGB& img, const std::string& path);

}  // namespace mbtrack
