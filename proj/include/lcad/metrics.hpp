#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lcad/imaging.hpp"
#include "lcad/synthdata.hpp"

namespace lcad {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) over all channels of [0,1] images, capped at 99 dB.
double psnr(const RgbImage& a, const RgbImage& b);
/// PSNR between two planes with the given peak value.
double psnr_planes(std::span<const double> a, std::span<const double> b, double peak);

/// Single-scale SSIM on CIE L rescaled to [0,1]: 11x11 Gaussian window
/// (sigma 1.5), valid region only.
double ssim(const RgbImage& a, const RgbImage& b);
double ssim_planes(std::span<const double> a, std::span<const double> b, int height, int width);

/// Hasler-Suesstrunk colourfulness on the 0-255 scale.
double colorfulness(const RgbImage& img);

/// Nearest palette colour of a mean (L, a, b): by ab distance, with achromatic
/// candidates separated by lightness.
const PaletteEntry& classify_color(const Lab& lab);

/// Fraction of bound instances whose mean colour classifies as requested.
double instance_color_accuracy(const RgbImage& result, const std::vector<InstanceRecord>& instances,
                               const Description& description);

struct ImageMetrics {
  std::string id;
  double psnr = 0.0;
  double ssim = 0.0;
  double colorfulness = 0.0;
  double delta_colorfulness = 0.0;
  std::optional<double> instance_color_accuracy;
};

struct MetricReport {
  std::string label;
  std::vector<ImageMetrics> images;

  double mean_psnr() const;
  double mean_ssim() const;
  double mean_colorfulness() const;
  double mean_delta_colorfulness() const;
  /// Mean over images that carry an accuracy value; nullopt if none do.
  std::optional<double> mean_accuracy() const;
  int accuracy_count() const;

  std::string to_json() const;
  static MetricReport from_json(const std::string& text);
};

ImageMetrics evaluate_image(const std::string& id, const RgbImage& result, const RgbImage& reference,
                            const std::vector<InstanceRecord>& instances, const Description* description);

/// Plain-text table, one row per report (PSNR, SSIM, LPIPS, FID, colourfulness,
/// delta colourfulness, instance accuracy). LPIPS / FID slots are left empty.
std::string format_table(std::span<const MetricReport> reports);

}  // namespace lcad
