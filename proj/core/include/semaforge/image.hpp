#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace semaforge {

// Interleaved height x width x channels, values nominally in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), data(h * w * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return data[(y * width + x) * channels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * width + x) * channels + c];
  }
  std::size_t pixels() const { return height * width; }
  bool empty() const { return data.empty(); }
};

// Binary H x W mask, one byte per pixel (0 or 1).
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), data(h * w, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
  std::size_t count() const;
  bool operator==(const Mask& other) const = default;
};

// 8-bit PNG, gray or RGB (alpha dropped, 16-bit reduced). Values / 255.
Image load_png(const std::filesystem::path& path);
// Gray (1 channel) or RGB (3 channels); values clamped to [0,1], rounded to 8 bits.
void save_png(const std::filesystem::path& path, const Image& image);

// Binary PGM (P5), 0/255.
void save_pgm(const std::filesystem::path& path, const Mask& mask);
// Single-channel image scaled by 255 into a binary PGM.
void save_pgm(const std::filesystem::path& path, const Image& gray);

// Bilinear resampling with half-pixel centres (corners not aligned):
// source coordinate = (dst + 0.5) * in / out - 0.5, clamped at the border.
// An integer-ratio 1:1 resize returns the input unchanged.
Image resize_bilinear(const Image& image, std::size_t out_h, std::size_t out_w);

// Quantise to 8 bits and back, as a PNG round trip would.
Image quantize8(const Image& image);

}  // namespace semaforge
