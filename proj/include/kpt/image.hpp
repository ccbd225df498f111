#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "kpt/geometry.hpp"

namespace kpt {

/// Grayscale image with intensities in [0, 1], row-major.
class Image {
 public:
  Image() = default;
  Image(std::size_t height, std::size_t width, float fill = 0.0f);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  bool empty() const { return pixels_.empty(); }

  float at(std::size_t row, std::size_t col) const { return pixels_[row * width_ + col]; }
  float& at(std::size_t row, std::size_t col) { return pixels_[row * width_ + col]; }
  const std::vector<float>& pixels() const { return pixels_; }
  std::vector<float>& pixels() { return pixels_; }

  /// Bilinear sample at a continuous position (pixel centers at k + 0.5).
  /// Returns `outside` when the position falls off the image.
  float sample(Vec2 p, float outside = 0.0f) const;
  Image crop(std::size_t row, std::size_t col, std::size_t height, std::size_t width) const;

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<float> pixels_;
};

/// 8-bit interleaved RGB raster used for visualizations.
struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> rgb;

  RgbImage() = default;
  RgbImage(std::size_t h, std::size_t w) : height(h), width(w), rgb(h * w * 3, 0) {}
  void set(std::size_t row, std::size_t col, std::uint8_t r, std::uint8_t g, std::uint8_t b);
  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// Reads PNG or binary PPM/PGM (P5/P6). Color is reduced to the average of
/// the channels.
Image read_image(const std::string& path);
/// Binary PPM (P6) with R = G = B.
void write_ppm(const std::string& path, const Image& img);
void write_ppm(const std::string& path, const RgbImage& img);
void write_png(const std::string& path, const RgbImage& img);
/// Dispatches on the extension (.png, otherwise PPM).
void write_rgb(const std::string& path, const RgbImage& img);

/// One "x y" pair per line; blank lines and lines starting with '#' are skipped.
std::vector<Vec2> read_keypoints(const std::string& path);
void write_keypoints(const std::string& path, const std::vector<Vec2>& kps);

}  // namespace kpt
