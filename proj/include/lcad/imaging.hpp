#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace lcad {

/// Interleaved H x W x 3 sRGB image with channel values in [0,1].
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  /// Validating constructor: size >= 8x8 and every channel finite in [0,1].
  static RgbImage create(int height, int width, std::vector<double> data);
  static RgbImage filled(int height, int width, double r, double g, double b);

  double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
};

/// Planar CIELAB image (D65, 2 degree observer).
struct LabImage {
  int height = 0;
  int width = 0;
  std::vector<double> l, a, b;
};

/// Luminance plane: L* in [0,100].
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<double> l;
};

using Lab = std::array<double, 3>;
using Rgb = std::array<double, 3>;

Lab srgb_to_lab(const Rgb& rgb);
/// Inverse conversion; out-of-gamut results are clipped to [0,1].
Rgb lab_to_srgb(const Lab& lab);
double delta_e(const Lab& x, const Lab& y);

void validate(const RgbImage& img);

LabImage rgb_to_lab(const RgbImage& img);
RgbImage lab_to_rgb(const LabImage& img);
GrayImage to_grayscale(const RgbImage& img);

/// 8-bit RGB PNG I/O. Reading accepts any PNG colour type and converts to RGB.
RgbImage load_image(const std::filesystem::path& path);
void save_image(const RgbImage& img, const std::filesystem::path& path);

/// Binary masks stored as 8-bit grayscale PNG (0 / 255). Loading thresholds
/// at 128.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  std::size_t area() const;
};

Mask load_mask(const std::filesystem::path& path);
void save_mask(const Mask& mask, const std::filesystem::path& path);

}  // namespace lcad
