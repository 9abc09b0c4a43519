#include "lcad/imaging.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <string>

#include "lcad/error.hpp"

namespace lcad {
namespace {

// sRGB primaries -> XYZ, D65 white.
constexpr double kM[3][3] = {{0.4124564, 0.3575761, 0.1804375},
                             {0.2126729, 0.7151522, 0.0721750},
                             {0.0193339, 0.1191920, 0.9503041}};
constexpr double kMinv[3][3] = {{3.2404542, -1.5371385, -0.4985314},
                                {-0.9692660, 1.8760108, 0.0415560},
                                {0.0556434, -0.2040259, 1.0572252}};
constexpr double kWhite[3] = {0.4124564 + 0.3575761 + 0.1804375, 0.2126729 + 0.7151522 + 0.0721750,
                              0.0193339 + 0.1191920 + 0.9503041};
constexpr double kEps = 216.0 / 24389.0;
constexpr double kKappa = 24389.0 / 27.0;

double to_linear(double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); }
double to_gamma(double c) { return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055; }
double lab_f(double t) { return t > kEps ? std::cbrt(t) : (kKappa * t + 16.0) / 116.0; }
double lab_finv(double f) {
  const double f3 = f * f * f;
  return f3 > kEps ? f3 : (116.0 * f - 16.0) / kKappa;
}

}  // namespace

RgbImage RgbImage::create(int height, int width, std::vector<double> data) {
  RgbImage img{height, width, std::move(data)};
  validate(img);
  return img;
}

RgbImage RgbImage::filled(int height, int width, double r, double g, double b) {
  std::vector<double> d(static_cast<std::size_t>(height) * width * 3);
  for (std::size_t i = 0; i < d.size(); i += 3) {
    d[i] = r;
    d[i + 1] = g;
    d[i + 2] = b;
  }
  return create(height, width, std::move(d));
}

void validate(const RgbImage& img) {
  if (img.height < 8 || img.width < 8) {
    throw ValidationError("image must be at least 8x8, got " + std::to_string(img.height) + "x" +
                          std::to_string(img.width));
  }
  if (img.data.size() != img.pixels() * 3) throw ValidationError("image buffer size does not match 3*H*W");
  for (double v : img.data) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("image channel value outside [0,1]: " + std::to_string(v));
  }
}

Lab srgb_to_lab(const Rgb& rgb) {
  const double lin[3] = {to_linear(rgb[0]), to_linear(rgb[1]), to_linear(rgb[2])};
  double f[3];
  for (int i = 0; i < 3; ++i) {
    const double xyz = kM[i][0] * lin[0] + kM[i][1] * lin[1] + kM[i][2] * lin[2];
    f[i] = lab_f(xyz / kWhite[i]);
  }
  return {116.0 * f[1] - 16.0, 500.0 * (f[0] - f[1]), 200.0 * (f[1] - f[2])};
}

Rgb lab_to_srgb(const Lab& lab) {
  const double fy = (lab[0] + 16.0) / 116.0;
  const double fx = fy + lab[1] / 500.0;
  const double fz = fy - lab[2] / 200.0;
  const double xyz[3] = {lab_finv(fx) * kWhite[0], lab_finv(fy) * kWhite[1], lab_finv(fz) * kWhite[2]};
  Rgb out;
  for (int i = 0; i < 3; ++i) {
    const double lin = kMinv[i][0] * xyz[0] + kMinv[i][1] * xyz[1] + kMinv[i][2] * xyz[2];
    out[i] = std::clamp(to_gamma(std::max(lin, 0.0)), 0.0, 1.0);
  }
  return out;
}

double delta_e(const Lab& x, const Lab& y) {
  return std::sqrt((x[0] - y[0]) * (x[0] - y[0]) + (x[1] - y[1]) * (x[1] - y[1]) + (x[2] - y[2]) * (x[2] - y[2]));
}

LabImage rgb_to_lab(const RgbImage& img) {
  validate(img);
  LabImage out{img.height, img.width, {}, {}, {}};
  const std::size_t n = img.pixels();
  out.l.resize(n);
  out.a.resize(n);
  out.b.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Lab v = srgb_to_lab({img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2]});
    out.l[i] = v[0];
    out.a[i] = v[1];
    out.b[i] = v[2];
  }
  return out;
}

RgbImage lab_to_rgb(const LabImage& img) {
  const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
  if (img.l.size() != n || img.a.size() != n || img.b.size() != n) {
    throw ValidationError("Lab image planes do not match H*W");
  }
  std::vector<double> d(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    const Rgb c = lab_to_srgb({img.l[i], img.a[i], img.b[i]});
    d[3 * i] = c[0];
    d[3 * i + 1] = c[1];
    d[3 * i + 2] = c[2];
  }
  return RgbImage::create(img.height, img.width, std::move(d));
}

GrayImage to_grayscale(const RgbImage& img) {
  LabImage lab = rgb_to_lab(img);
  return {lab.height, lab.width, std::move(lab.l)};
}

namespace {

std::vector<std::uint8_t> read_png(const std::filesystem::path& path, std::uint32_t format, int& h, int& w) {
  if (!std::filesystem::exists(path)) throw IoError("no such image file: " + path.string());
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&image, path.c_str()) == 0) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  image.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr) == 0) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("corrupt PNG " + path.string() + ": " + msg);
  }
  h = static_cast<int>(image.height);
  w = static_cast<int>(image.width);
  return buf;
}

void write_png(const std::filesystem::path& path, std::uint32_t format, int h, int w,
               const std::vector<std::uint8_t>& buf) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = format;
  if (png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr) == 0) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot write PNG " + path.string() + ": " + msg);
  }
}

}  // namespace

RgbImage load_image(const std::filesystem::path& path) {
  int h = 0, w = 0;
  auto buf = read_png(path, PNG_FORMAT_RGB, h, w);
  std::vector<double> d(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) d[i] = buf[i] / 255.0;
  try {
    return RgbImage::create(h, w, std::move(d));
  } catch (const ValidationError& e) {
    throw IoError("invalid image " + path.string() + ": " + e.what());
  }
}

void save_image(const RgbImage& img, const std::filesystem::path& path) {
  validate(img);
  std::vector<std::uint8_t> buf(img.data.size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    buf[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
  }
  write_png(path, PNG_FORMAT_RGB, img.height, img.width, buf);
}

std::size_t Mask::area() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

Mask load_mask(const std::filesystem::path& path) {
  Mask m;
  auto buf = read_png(path, PNG_FORMAT_GRAY, m.height, m.width);
  m.bits.resize(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) m.bits[i] = buf[i] >= 128 ? 1 : 0;
  return m;
}

void save_mask(const Mask& mask, const std::filesystem::path& path) {
  if (mask.bits.size() != static_cast<std::size_t>(mask.height) * mask.width) {
    throw ValidationError("mask buffer size does not match H*W");
  }
  std::vector<std::uint8_t> buf(mask.bits.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = mask.bits[i] ? 255 : 0;
  write_png(path, PNG_FORMAT_GRAY, mask.height, mask.width, buf);
}

}  // namespace lcad
