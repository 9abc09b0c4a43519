#include "lcad/compression.hpp"

#include <algorithm>
#include <cmath>

#include "lcad/error.hpp"
#include "lcad/ops.hpp"

namespace lcad {

using nn::Pad;
using nn::Var;

std::vector<double> artifact_map(std::span<const double> residual, int height, int width, int n_win) {
  if (n_win < 3 || n_win % 2 == 0) {
    throw ValidationError("artifact window must be odd and >= 3, got " + std::to_string(n_win));
  }
  if (residual.size() != static_cast<std::size_t>(height) * width * 3) {
    throw ShapeError("artifact_map: residual must be H x W x 3");
  }
  const int r = n_win / 2;
  if (r >= height || r >= width) throw ShapeError("artifact_map: window larger than image");
  for (double v : residual) {
    if (!std::isfinite(v)) throw ValidationError("artifact_map: non-finite residual");
  }
  auto refl = [](int i, int n) { return i < 0 ? -i : (i >= n ? 2 * n - 2 - i : i); };
  const double inv = 1.0 / (static_cast<double>(n_win) * n_win);
  std::vector<double> out(static_cast<std::size_t>(height) * width, 0.0);
  std::vector<double> win(static_cast<std::size_t>(n_win) * n_win);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        // Values relative to the centre pixel: exact zeros on flat regions.
        const double centre = residual[(static_cast<std::size_t>(y) * width + x) * 3 + c];
        double mu = 0.0;
        std::size_t k = 0;
        for (int dy = -r; dy <= r; ++dy) {
          const int yy = refl(y + dy, height);
          for (int dx = -r; dx <= r; ++dx) {
            const int xx = refl(x + dx, width);
            win[k] = residual[(static_cast<std::size_t>(yy) * width + xx) * 3 + c] - centre;
            mu += win[k++];
          }
        }
        mu *= inv;
        double var = 0.0;
        for (double v : win) var += (v - mu) * (v - mu);
        out[static_cast<std::size_t>(y) * width + x] += var * inv / 3.0;
      }
    }
  }
  return out;
}

Var images_to_tensor(std::span<const RgbImage> images) {
  if (images.empty()) throw ShapeError("images_to_tensor: empty batch");
  const int h = images[0].height, w = images[0].width;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<double> d(images.size() * 3 * plane);
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n].height != h || images[n].width != w) throw ShapeError("images_to_tensor: mixed sizes");
    for (std::size_t p = 0; p < plane; ++p) {
      for (int c = 0; c < 3; ++c) d[(n * 3 + c) * plane + p] = images[n].data[p * 3 + c];
    }
  }
  return Var::from({static_cast<int>(images.size()), 3, h, w}, std::move(d));
}

Var grays_to_tensor(std::span<const GrayImage> grays) {
  if (grays.empty()) throw ShapeError("grays_to_tensor: empty batch");
  const int h = grays[0].height, w = grays[0].width;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<double> d(grays.size() * plane);
  for (std::size_t n = 0; n < grays.size(); ++n) {
    if (grays[n].height != h || grays[n].width != w) throw ShapeError("grays_to_tensor: mixed sizes");
    for (std::size_t p = 0; p < plane; ++p) d[n * plane + p] = grays[n].l[p] / 100.0;
  }
  return Var::from({static_cast<int>(grays.size()), 1, h, w}, std::move(d));
}

RgbImage tensor_to_image(const Var& x, int index) {
  if (x.shape().size() != 4 || x.dim(1) != 3) throw ShapeError("tensor_to_image: expected [N,3,H,W]");
  const int h = x.dim(2), w = x.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<double> d(plane * 3);
  const double* src = x.data() + static_cast<std::size_t>(index) * 3 * plane;
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) d[p * 3 + c] = std::clamp(src[c * plane + p], 0.0, 1.0);
  }
  return RgbImage::create(h, w, std::move(d));
}

ConvBackbone::ConvBackbone(int in_channels, const int widths[3], nn::Rng& rng)
    : c0_(nn::Conv2d::make(in_channels, widths[0], 3, 1, Pad::kReflect, rng)),
      c1a_(nn::Conv2d::make(widths[0], widths[1], 3, 2, Pad::kReflect, rng)),
      c1b_(nn::Conv2d::make(widths[1], widths[1], 3, 1, Pad::kReflect, rng)),
      c2a_(nn::Conv2d::make(widths[1], widths[2], 3, 2, Pad::kReflect, rng)),
      c2b_(nn::Conv2d::make(widths[2], widths[2], 3, 1, Pad::kReflect, rng)) {}

std::vector<Var> ConvBackbone::forward(const Var& x) const {
  Var t0 = nn::silu(c0_(x));
  Var t1 = nn::silu(c1b_(nn::silu(c1a_(t0))));
  Var t2 = nn::silu(c2b_(nn::silu(c2a_(t1))));
  return {t0, t1, t2};
}

void ConvBackbone::collect(nn::ParamList& out, const std::string& prefix) const {
  c0_.collect(out, prefix + ".c0");
  c1a_.collect(out, prefix + ".c1a");
  c1b_.collect(out, prefix + ".c1b");
  c2a_.collect(out, prefix + ".c2a");
  c2b_.collect(out, prefix + ".c2b");
}

Decoder::Decoder(int latent_channels, const int widths[3], nn::Rng& rng)
    : in_(nn::Conv2d::make(latent_channels, widths[2], 3, 1, Pad::kReflect, rng)),
      b2_(nn::Conv2d::make(widths[2], widths[2], 3, 1, Pad::kReflect, rng)),
      u1a_(nn::Conv2d::make(widths[2], widths[1], 3, 1, Pad::kReflect, rng)),
      u1b_(nn::Conv2d::make(widths[1], widths[1], 3, 1, Pad::kReflect, rng)),
      u0a_(nn::Conv2d::make(widths[1], widths[0], 3, 1, Pad::kReflect, rng)),
      u0b_(nn::Conv2d::make(widths[0], widths[0], 3, 1, Pad::kReflect, rng)),
      out_(nn::Conv2d::make(widths[0], 3, 3, 1, Pad::kReflect, rng)) {
  for (int s = 0; s < 3; ++s) {
    inject_[s] = nn::Conv2d::make(widths[s], widths[s], 1, 1, Pad::kZero, rng, false);
    std::fill(inject_[s].weight.values().begin(), inject_[s].weight.values().end(), 0.0);
  }
}

Var Decoder::forward(const Var& z, const LuminancePyramid* pyramid) const {
  if (pyramid != nullptr && pyramid->levels.size() != 3) {
    throw ShapeError("decoder expects 3 pyramid levels, got " + std::to_string(pyramid->levels.size()));
  }
  auto inject = [&](Var h, int s) {
    if (pyramid == nullptr) return h;
    const Var& lvl = pyramid->levels[static_cast<std::size_t>(s)];
    if (lvl.dim(2) != h.dim(2) || lvl.dim(3) != h.dim(3)) {
      throw ShapeError("pyramid level " + std::to_string(s) + " has spatial size " + nn::shape_str(lvl.shape()) +
                       ", decoder stage is " + nn::shape_str(h.shape()));
    }
    return nn::add(h, inject_[s](lvl));
  };
  Var h = nn::silu(in_(z));
  h = inject(h, 2);
  h = nn::silu(b2_(h));
  h = nn::silu(u1a_(nn::upsample_nearest2(h)));
  h = inject(h, 1);
  h = nn::silu(u1b_(h));
  h = nn::silu(u0a_(nn::upsample_nearest2(h)));
  h = inject(h, 0);
  h = nn::silu(u0b_(h));
  return nn::sigmoid(out_(h));
}

void Decoder::collect_base(nn::ParamList& out, const std::string& prefix) const {
  in_.collect(out, prefix + ".in");
  b2_.collect(out, prefix + ".b2");
  u1a_.collect(out, prefix + ".u1a");
  u1b_.collect(out, prefix + ".u1b");
  u0a_.collect(out, prefix + ".u0a");
  u0b_.collect(out, prefix + ".u0b");
  out_.collect(out, prefix + ".out");
}

void Decoder::collect_injection(nn::ParamList& out, const std::string& prefix) const {
  for (int s = 0; s < 3; ++s) inject_[s].collect(out, prefix + ".inject" + std::to_string(s));
}

PatchDiscriminator::PatchDiscriminator(nn::Rng& rng)
    : c0_(nn::Conv2d::make(3, 16, 3, 2, Pad::kZero, rng)),
      c1_(nn::Conv2d::make(16, 32, 3, 2, Pad::kZero, rng)),
      c2_(nn::Conv2d::make(32, 1, 3, 1, Pad::kZero, rng)) {}

Var PatchDiscriminator::forward(const Var& x) const {
  Var h = nn::leaky_relu(c0_(x), 0.2);
  h = nn::leaky_relu(c1_(h), 0.2);
  return c2_(h);
}

void PatchDiscriminator::collect(nn::ParamList& out, const std::string& prefix) const {
  c0_.collect(out, prefix + ".c0");
  c1_.collect(out, prefix + ".c1");
  c2_.collect(out, prefix + ".c2");
}

GradientSimilarityProxy::GradientSimilarityProxy() {
  to_gray_ = Var::from({1, 3, 1, 1}, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  // Sobel x / y.
  sobel_ = Var::from({2, 1, 3, 3}, {-1, 0, 1, -2, 0, 2, -1, 0, 1,  //
                                    -1, -2, -1, 0, 0, 0, 1, 2, 1});
  pair_sum_ = Var::from({1, 2, 1, 1}, {1.0, 1.0});
}

Var GradientSimilarityProxy::loss(const Var& x, const Var& x_hat) const {
  constexpr double kC = 1e-3;
  constexpr double kEps = 1e-8;
  auto magnitude = [&](const Var& img) {
    Var g = nn::conv2d(nn::conv2d(img, to_gray_, Var(), 1, 0, Pad::kZero), sobel_, Var(), 1, 1, Pad::kReflect);
    return nn::sqrt_eps(nn::conv2d(nn::square(g), pair_sum_, Var(), 1, 0, Pad::kZero), kEps);
  };
  Var a = x, b = x_hat;
  Var total;
  for (int s = 0; s < 3; ++s) {
    if (s > 0) {
      a = nn::avg_pool2(a);
      b = nn::avg_pool2(b);
    }
    Var ga = magnitude(a), gb = magnitude(b);
    Var num = nn::add_scalar(nn::scale(nn::mul(ga, gb), 2.0), kC);
    Var den = nn::add_scalar(nn::add(nn::square(ga), nn::square(gb)), kC);
    Var term = nn::add_scalar(nn::scale(nn::mean(nn::div(num, den)), -1.0), 1.0);
    total = total.defined() ? nn::add(total, term) : term;
  }
  return nn::scale(total, 1.0 / 3.0);
}

CompressionModel::CompressionModel(const CompressionConfig& config, nn::Rng& rng)
    : config_(config),
      encoder_(3, config.widths, rng),
      latent_head_(nn::Conv2d::make(config.widths[2], config.latent_channels, 1, 1, Pad::kZero, rng)),
      lum_encoder_(1, config.widths, rng),
      decoder_(config.latent_channels, config.widths, rng),
      disc_(rng),
      perceptual_(std::make_shared<GradientSimilarityProxy>()) {
  if (config.image_size % kDownsample != 0) throw ConfigError("image size must be divisible by 4");
  latent_mean.assign(static_cast<std::size_t>(config.latent_channels), 0.0);
  latent_std.assign(static_cast<std::size_t>(config.latent_channels), 1.0);
}

Var CompressionModel::encode(const Var& images) const {
  if (images.shape().size() != 4 || images.dim(1) != 3 || images.dim(2) % kDownsample || images.dim(3) % kDownsample) {
    throw ShapeError("compress_encode: expected [N,3,H,W] with H,W divisible by 4, got " +
                     nn::shape_str(images.shape()));
  }
  return latent_head_(encoder_.forward(images)[2]);
}

LuminancePyramid CompressionModel::luminance(const Var& grays) const {
  if (grays.shape().size() != 4 || grays.dim(1) != 1 || grays.dim(2) % kDownsample || grays.dim(3) % kDownsample) {
    throw ShapeError("luminance_features: expected [N,1,H,W] with H,W divisible by 4, got " +
                     nn::shape_str(grays.shape()));
  }
  return {lum_encoder_.forward(grays)};
}

Var CompressionModel::decode(const Var& z, const LuminancePyramid* pyramid) const {
  if (z.shape().size() != 4 || z.dim(1) != config_.latent_channels) {
    throw ShapeError("compress_decode: latent shape " + nn::shape_str(z.shape()));
  }
  return decoder_.forward(z, pyramid);
}

PixelLoss CompressionModel::pixel_loss(const Var& x, const Var& x_hat, bool use_discriminator) const {
  if (x.shape() != x_hat.shape()) throw ShapeError("pixel_loss: shape mismatch");
  for (double v : x.values()) {
    if (!std::isfinite(v)) throw ValidationError("pixel_loss: non-finite input");
  }
  for (double v : x_hat.values()) {
    if (!std::isfinite(v)) throw ValidationError("pixel_loss: non-finite input");
  }
  const int nb = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<double> weight(x.size());
  std::vector<double> residual(plane * 3);
  for (int n = 0; n < nb; ++n) {
    const double* xs = x.data() + static_cast<std::size_t>(n) * 3 * plane;
    const double* ys = x_hat.data() + static_cast<std::size_t>(n) * 3 * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      for (int c = 0; c < 3; ++c) residual[p * 3 + c] = xs[c * plane + p] - ys[c * plane + p];
    }
    auto map = artifact_map(residual, h, w, config_.n_win);
    const double mx = *std::max_element(map.begin(), map.end());
    for (int c = 0; c < 3; ++c) {
      for (std::size_t p = 0; p < plane; ++p) {
        weight[(static_cast<std::size_t>(n) * 3 + c) * plane + p] = 1.0 + (mx > 0.0 ? map[p] / mx : 0.0);
      }
    }
  }
  PixelLoss out;
  out.rec = nn::mean(nn::mul_const(nn::abs(nn::sub(x, x_hat)), weight));
  out.per = perceptual_->loss(x, x_hat);
  out.dis = use_discriminator ? nn::scale(nn::mean(disc_.forward(x_hat)), -1.0) : Var::zeros({1});
  out.total = nn::add(nn::add(out.rec, nn::scale(out.dis, config_.alpha)), nn::scale(out.per, config_.beta));
  return out;
}

CompressionModel::PixelStep CompressionModel::pixel_step(const Var& x, const Var& x_hat, bool use_discriminator) const {
  Var leaf = Var::from(x_hat.shape(), std::vector<double>(x_hat.values().begin(), x_hat.values().end()), true);
  PixelLoss pl = pixel_loss(x, leaf, use_discriminator);
  PixelStep st;
  st.rec = pl.rec.item();
  st.per = pl.per.item();
  st.dis = pl.dis.item();
  st.total = pl.total.item();
  nn::backward(nn::add(pl.rec, nn::scale(pl.per, config_.beta)));
  st.grad.assign(leaf.grad().begin(), leaf.grad().end());
  if (use_discriminator && config_.alpha != 0.0) {
    leaf.zero_grad();
    nn::backward(pl.dis);
    double n1 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < st.grad.size(); ++i) {
      n1 += st.grad[i] * st.grad[i];
      n2 += leaf.grad()[i] * leaf.grad()[i];
    }
    st.adv_weight = config_.adv_balance * std::min(std::sqrt(n1) / (std::sqrt(n2) + 1e-12), 1e4);
    for (std::size_t i = 0; i < st.grad.size(); ++i) st.grad[i] += config_.alpha * st.adv_weight * leaf.grad()[i];
  }
  return st;
}

Var CompressionModel::discriminator_loss(const Var& x, const Var& x_hat) const {
  Var real = disc_.forward(x);
  Var fake = disc_.forward(x_hat.clone());
  return nn::add(nn::mean(nn::relu(nn::add_scalar(nn::scale(real, -1.0), 1.0))),
                 nn::mean(nn::relu(nn::add_scalar(fake, 1.0))));
}

Var CompressionModel::standardize(const Var& z) const {
  const int nb = z.dim(0), c = z.dim(1), hw = z.dim(2) * z.dim(3);
  std::vector<double> scale(z.size()), shift(static_cast<std::size_t>(nb) * c);
  for (int n = 0; n < nb; ++n) {
    for (int ch = 0; ch < c; ++ch) {
      const double s = 1.0 / latent_std[static_cast<std::size_t>(ch)];
      std::fill_n(scale.begin() + (static_cast<std::ptrdiff_t>(n) * c + ch) * hw, hw, s);
      shift[static_cast<std::size_t>(n) * c + ch] = -latent_mean[static_cast<std::size_t>(ch)] * s;
    }
  }
  return nn::add_channel_offset(nn::mul_const(z, scale), Var::from({nb, c}, std::move(shift)));
}

Var CompressionModel::destandardize(const Var& z) const {
  const int nb = z.dim(0), c = z.dim(1), hw = z.dim(2) * z.dim(3);
  std::vector<double> scale(z.size()), shift(static_cast<std::size_t>(nb) * c);
  for (int n = 0; n < nb; ++n) {
    for (int ch = 0; ch < c; ++ch) {
      std::fill_n(scale.begin() + (static_cast<std::ptrdiff_t>(n) * c + ch) * hw, hw,
                  latent_std[static_cast<std::size_t>(ch)]);
      shift[static_cast<std::size_t>(n) * c + ch] = latent_mean[static_cast<std::size_t>(ch)];
    }
  }
  return nn::add_channel_offset(nn::mul_const(z, scale), Var::from({nb, c}, std::move(shift)));
}

nn::ParamList CompressionModel::encoder_params() const {
  nn::ParamList p;
  encoder_.collect(p, "enc");
  latent_head_.collect(p, "enc.head");
  return p;
}

nn::ParamList CompressionModel::decoder_params() const {
  nn::ParamList p;
  decoder_.collect_base(p, "dec");
  return p;
}

nn::ParamList CompressionModel::luminance_params() const {
  nn::ParamList p;
  lum_encoder_.collect(p, "lum");
  decoder_.collect_injection(p, "dec");
  return p;
}

nn::ParamList CompressionModel::discriminator_params() const {
  nn::ParamList p;
  disc_.collect(p, "disc");
  return p;
}

nn::ParamList CompressionModel::all_params() const {
  nn::ParamList p = encoder_params();
  for (auto& e : decoder_params()) p.push_back(e);
  for (auto& e : luminance_params()) p.push_back(e);
  for (auto& e : discriminator_params()) p.push_back(e);
  return p;
}

}  // namespace lcad
