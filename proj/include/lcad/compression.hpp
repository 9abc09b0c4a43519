#pragma once

#include <memory>
#include <span>
#include <vector>

#include "lcad/imaging.hpp"
#include "lcad/layers.hpp"
#include "lcad/tensor.hpp"

namespace lcad {

struct CompressionConfig {
  int image_size = 64;
  int latent_channels = 4;
  /// Feature widths at full, 1/2 and 1/4 resolution.
  int widths[3] = {16, 32, 32};
  int n_win = 7;
  double alpha = 1.0;
  double beta = 0.5;
  /// Adversarial gradient norm relative to the reconstruction gradient norm.
  double adv_balance = 0.1;
};

inline constexpr int kDownsample = 4;

/// Multi-scale luminance features; level s is [N, widths[s], H/2^s, W/2^s].
struct LuminancePyramid {
  std::vector<nn::Var> levels;
};

/// Windowed local variance of the residual, averaged over channels.
/// residual: interleaved H x W x 3. Borders use reflective padding.
std::vector<double> artifact_map(std::span<const double> residual, int height, int width, int n_win);

/// Batch helpers: images -> [N,3,H,W]; grays -> [N,1,H,W] holding L/100.
nn::Var images_to_tensor(std::span<const RgbImage> images);
nn::Var grays_to_tensor(std::span<const GrayImage> grays);
RgbImage tensor_to_image(const nn::Var& x, int index);

/// Three-stage convolutional backbone with taps at each scale; used both as
/// the compression encoder (plus a 1x1 latent head) and the luminance encoder.
class ConvBackbone {
 public:
  ConvBackbone() = default;
  ConvBackbone(int in_channels, const int widths[3], nn::Rng& rng);
  std::vector<nn::Var> forward(const nn::Var& x) const;
  void collect(nn::ParamList& out, const std::string& prefix) const;

 private:
  nn::Conv2d c0_, c1a_, c1b_, c2a_, c2b_;
};

class Decoder {
 public:
  Decoder() = default;
  Decoder(int latent_channels, const int widths[3], nn::Rng& rng);
  /// pyramid == nullptr decodes without luminance injection.
  nn::Var forward(const nn::Var& z, const LuminancePyramid* pyramid) const;
  void collect_base(nn::ParamList& out, const std::string& prefix) const;
  void collect_injection(nn::ParamList& out, const std::string& prefix) const;

 private:
  nn::Conv2d in_, b2_, u1a_, u1b_, u0a_, u0b_, out_;
  nn::Conv2d inject_[3];
};

class PatchDiscriminator {
 public:
  PatchDiscriminator() = default;
  explicit PatchDiscriminator(nn::Rng& rng);
  nn::Var forward(const nn::Var& x) const;
  void collect(nn::ParamList& out, const std::string& prefix) const;

 private:
  nn::Conv2d c0_, c1_, c2_;
};

/// Perceptual term behind an interface so a learned feature network can be
/// dropped in.
class PerceptualProxy {
 public:
  virtual ~PerceptualProxy() = default;
  virtual nn::Var loss(const nn::Var& x, const nn::Var& x_hat) const = 0;
};

/// 1 - mean gradient-magnitude similarity over three scales.
class GradientSimilarityProxy final : public PerceptualProxy {
 public:
  GradientSimilarityProxy();
  nn::Var loss(const nn::Var& x, const nn::Var& x_hat) const override;

 private:
  nn::Var to_gray_, sobel_, pair_sum_;
};

struct PixelLoss {
  nn::Var total;
  nn::Var rec, dis, per;
};

class CompressionModel {
 public:
  CompressionModel() = default;
  CompressionModel(const CompressionConfig& config, nn::Rng& rng);

  const CompressionConfig& config() const { return config_; }

  nn::Var encode(const nn::Var& images) const;
  LuminancePyramid luminance(const nn::Var& grays) const;
  nn::Var decode(const nn::Var& z, const LuminancePyramid* pyramid) const;
  nn::Var discriminate(const nn::Var& images) const { return disc_.forward(images); }

  /// L_rec + alpha * L_dis + beta * L_per. The artifact weighting is computed
  /// from detached residuals. With use_discriminator false, L_dis is zero.
  PixelLoss pixel_loss(const nn::Var& x, const nn::Var& x_hat, bool use_discriminator) const;
  /// Loss values plus the gradient of the training objective with respect to
  /// x_hat. The adversarial gradient is rescaled to adv_balance times the norm
  /// of the reconstruction + perceptual gradient before alpha is applied.
  struct PixelStep {
    double total = 0.0, rec = 0.0, dis = 0.0, per = 0.0;
    double adv_weight = 0.0;
    std::vector<double> grad;
  };
  PixelStep pixel_step(const nn::Var& x, const nn::Var& x_hat, bool use_discriminator) const;
  /// Hinge loss for the discriminator update (generator output detached).
  nn::Var discriminator_loss(const nn::Var& x, const nn::Var& x_hat) const;

  /// Latent standardization statistics (per channel).
  std::vector<double> latent_mean, latent_std;
  nn::Var standardize(const nn::Var& z) const;
  nn::Var destandardize(const nn::Var& z) const;

  nn::ParamList encoder_params() const;
  nn::ParamList decoder_params() const;
  nn::ParamList luminance_params() const;
  nn::ParamList discriminator_params() const;
  nn::ParamList all_params() const;

 private:
  CompressionConfig config_;
  ConvBackbone encoder_;
  nn::Conv2d latent_head_;
  ConvBackbone lum_encoder_;
  Decoder decoder_;
  PatchDiscriminator disc_;
  std::shared_ptr<PerceptualProxy> perceptual_;
};

}  // namespace lcad
