#include "lcad/denoiser.hpp"

#include <cmath>
#include <limits>

#include "lcad/error.hpp"

namespace lcad {

using nn::Pad;
using nn::Var;

CecKernel CecKernel::make(int n_fix, int n_ext, int c_out, int k, nn::Rng& rng) {
  CecKernel c;
  c.w_fix = nn::init_uniform({c_out, n_fix, k, k}, n_fix * k * k, rng);
  c.w_ext = Var::zeros({c_out, n_ext, k, k}, true);
  c.bias = Var::zeros({c_out}, true);
  return c;
}

Var cec_forward(const Var& f, const Var& y_lum, const CecKernel& kernel) {
  if (f.shape().size() != 4 || f.dim(1) != kernel.n_fix()) {
    throw ShapeError("cec_forward: feature map " + nn::shape_str(f.shape()) + " does not match N_fix=" +
                     std::to_string(kernel.n_fix()));
  }
  const int pad = kernel.kernel() / 2;
  Var out = nn::conv2d(f, kernel.w_fix, kernel.bias, 1, pad, Pad::kZero);
  if (!y_lum.defined()) return out;
  if (y_lum.shape().size() != 4 || y_lum.dim(1) != kernel.n_ext() || y_lum.dim(0) != f.dim(0) ||
      y_lum.dim(2) != f.dim(2) || y_lum.dim(3) != f.dim(3)) {
    throw ShapeError("cec_forward: luminance input " + nn::shape_str(y_lum.shape()) + " vs feature map " +
                     nn::shape_str(f.shape()) + ", N_ext=" + std::to_string(kernel.n_ext()));
  }
  return nn::add(out, nn::conv2d(y_lum, kernel.w_ext, Var(), 1, pad, Pad::kZero));
}

int select_pyramid_level(const LuminancePyramid& pyr, int out_h, int out_w) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < pyr.levels.size(); ++s) {
    const Var& lvl = pyr.levels[s];
    if (!lvl.defined()) continue;
    const double d = std::abs(std::log2(static_cast<double>(lvl.dim(2)) / out_h)) +
                     std::abs(std::log2(static_cast<double>(lvl.dim(3)) / out_w));
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(s);
    }
  }
  if (best < 0) throw ValidationError("resize_luminance: empty luminance pyramid");
  return best;
}

Var resize_luminance(const LuminancePyramid& pyr, int out_h, int out_w, const Var& projection) {
  if (out_h <= 0 || out_w <= 0) throw ShapeError("resize_luminance: invalid target size");
  const Var& lvl = pyr.levels[static_cast<std::size_t>(select_pyramid_level(pyr, out_h, out_w))];
  int finest_h = 0, finest_w = 0;
  for (const Var& l : pyr.levels) {
    if (l.defined()) {
      finest_h = std::max(finest_h, l.dim(2));
      finest_w = std::max(finest_w, l.dim(3));
    }
  }
  if (out_h > finest_h || out_w > finest_w) throw ShapeError("resize_luminance: target larger than finest level");
  if (projection.dim(1) != lvl.dim(1)) {
    throw ShapeError("resize_luminance: projection expects " + std::to_string(projection.dim(1)) +
                     " channels, level has " + std::to_string(lvl.dim(1)));
  }
  Var r = (lvl.dim(2) == out_h && lvl.dim(3) == out_w) ? lvl : nn::resize_bilinear(lvl, out_h, out_w);
  return nn::conv2d(r, projection, Var(), 1, 0, Pad::kZero);
}

std::vector<double> timestep_embedding(int t, int dim) {
  const int half = dim / 2;
  std::vector<double> e(static_cast<std::size_t>(dim), 0.0);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e[static_cast<std::size_t>(i)] = std::sin(t * freq);
    e[static_cast<std::size_t>(half + i)] = std::cos(t * freq);
  }
  return e;
}

Denoiser::Denoiser(const DenoiserConfig& config, nn::Rng& rng) : config_(config) {
  const int* ch = config.channels;
  const int temb = config.time_dim * 2;
  in_ = nn::Conv2d::make(config.latent_channels, ch[0], 3, 1, Pad::kZero, rng);
  time1_ = nn::Linear::make(config.time_dim, temb, rng);
  time2_ = nn::Linear::make(temb, temb, rng);
  int cin = ch[0];
  for (int s = 0; s < kDenoiserStages; ++s) {
    DownStage& d = down_[s];
    d.cec = CecKernel::make(cin, config.n_ext[s], ch[s], 3, rng);
    d.lum_proj = nn::init_uniform({config.n_ext[s], config.lum_channels, 1, 1}, config.lum_channels, rng);
    d.time = nn::Linear::make(temb, ch[s], rng);
    d.norm = nn::GroupNorm::make(ch[s], config.groups);
    d.attn.wq = nn::Linear::make(ch[s], ch[s], rng, false);
    d.attn.wk = nn::Linear::make(config.text_width, ch[s], rng, false);
    d.attn.wv = nn::Linear::make(config.text_width, ch[s], rng, false);
    d.attn.wo = nn::Linear::make(ch[s], ch[s], rng);
    cin = ch[s];
  }
  mid_ = nn::Conv2d::make(ch[2], ch[2], 3, 1, Pad::kZero, rng);
  int below = ch[2];
  for (int s = kDenoiserStages - 1; s >= 0; --s) {
    UpStage& u = up_[s];
    u.conv = nn::Conv2d::make(below + ch[s], ch[s], 3, 1, Pad::kZero, rng);
    u.time = nn::Linear::make(temb, ch[s], rng);
    u.norm = nn::GroupNorm::make(ch[s], config.groups);
    below = ch[s];
  }
  out_norm_ = nn::GroupNorm::make(ch[0], config.groups);
  out_ = nn::Conv2d::make(ch[0], config.latent_channels, 3, 1, Pad::kZero, rng);
  std::fill(out_.weight.values().begin(), out_.weight.values().end(), 0.0);
}

void Denoiser::freeze_base(bool frozen) {
  base_frozen_ = frozen;
  for (auto& d : down_) d.cec.w_fix.set_requires_grad(!frozen);
}

Var Denoiser::predict(const Var& z_t, std::span<const int> t, const TextEmbedding& text, const LuminancePyramid* pyr,
                      const AttentionOverrideSet* overrides, AttentionMapSet* maps) const {
  if (z_t.shape().size() != 4 || z_t.dim(1) != config_.latent_channels) {
    throw ShapeError("denoise_predict: latent shape " + nn::shape_str(z_t.shape()));
  }
  const int nb = z_t.dim(0);
  const int h0 = z_t.dim(2), w0 = z_t.dim(3);
  if (h0 % 4 != 0 || w0 % 4 != 0) throw ShapeError("denoise_predict: latent size must be divisible by 4");
  if (static_cast<int>(t.size()) != nb) throw ShapeError("denoise_predict: one timestep per sample required");
  if (text.batch != nb || text.width != config_.text_width) {
    throw ShapeError("denoise_predict: text embedding batch/width mismatch");
  }
  if (overrides != nullptr) {
    if (overrides->blocks.size() != kDenoiserStages) {
      throw ShapeError("denoise_predict: override set has " + std::to_string(overrides->blocks.size()) +
                       " blocks, expected " + std::to_string(kDenoiserStages));
    }
    for (std::size_t l = 0; l < overrides->blocks.size(); ++l) {
      const auto& blk = overrides->blocks[l];
      if (!blk.empty() && static_cast<int>(blk.size()) != nb) {
        throw ShapeError("denoise_predict: override block " + std::to_string(l) + " batch mismatch");
      }
      const std::size_t positions = static_cast<std::size_t>(h0 >> l) * (w0 >> l);
      for (const auto& o : blk) {
        if (o.values.size() != o.columns.size() * positions) {
          throw ShapeError("denoise_predict: override block " + std::to_string(l) + " expects " +
                           std::to_string(positions) + " positions per column");
        }
        for (int c : o.columns) {
          if (c < 0 || c >= text.n_tok) throw ShapeError("denoise_predict: override column out of range");
        }
      }
    }
  }
  std::vector<double> te(static_cast<std::size_t>(nb) * config_.time_dim);
  for (int n = 0; n < nb; ++n) {
    if (t[static_cast<std::size_t>(n)] < 0) throw ValidationError("denoise_predict: negative timestep");
    auto e = timestep_embedding(t[static_cast<std::size_t>(n)], config_.time_dim);
    std::copy(e.begin(), e.end(), te.begin() + static_cast<std::ptrdiff_t>(n) * config_.time_dim);
  }
  Var temb = nn::silu(time2_(nn::silu(time1_(Var::from({nb, config_.time_dim}, std::move(te))))));

  if (maps != nullptr) {
    maps->blocks.assign(kDenoiserStages, {});
    maps->heights.assign(kDenoiserStages, 0);
    maps->widths.assign(kDenoiserStages, 0);
  }
  Var h = in_(z_t);
  Var skips[kDenoiserStages];
  for (int s = 0; s < kDenoiserStages; ++s) {
    const DownStage& d = down_[s];
    const int hh = h.dim(2), ww = h.dim(3);
    Var y = pyr != nullptr ? resize_luminance(*pyr, hh, ww, d.lum_proj) : Var();
    h = cec_forward(h, y, d.cec);
    h = nn::add_channel_offset(h, d.time(temb));
    h = nn::silu(d.norm(h));
    // Residual cross-attention over text tokens.
    Var tok = nn::nchw_to_tokens(h);
    Var q = d.attn.wq(tok);
    Var k = d.attn.wk(text.sequence);
    Var v = d.attn.wv(text.sequence);
    std::vector<const nn::AttentionOverride*> ov;
    if (overrides != nullptr && !overrides->blocks[static_cast<std::size_t>(s)].empty()) {
      for (const auto& o : overrides->blocks[static_cast<std::size_t>(s)]) {
        ov.push_back(o.columns.empty() ? nullptr : &o);
      }
    }
    nn::AttentionTrace* trace = maps != nullptr ? &maps->blocks[static_cast<std::size_t>(s)] : nullptr;
    Var a = nn::attention(q, k, v, config_.heads, text.valid, ov, trace);
    if (maps != nullptr) {
      maps->heights[static_cast<std::size_t>(s)] = hh;
      maps->widths[static_cast<std::size_t>(s)] = ww;
    }
    h = nn::add(h, nn::tokens_to_nchw(d.attn.wo(a), hh, ww));
    skips[s] = h;
    if (s + 1 < kDenoiserStages) h = nn::avg_pool2(h);
  }
  h = nn::silu(mid_(h));
  for (int s = kDenoiserStages - 1; s >= 0; --s) {
    const UpStage& u = up_[s];
    h = u.conv(nn::concat_channels(h, skips[s]));
    h = nn::add_channel_offset(h, u.time(temb));
    h = nn::silu(u.norm(h));
    if (s > 0) h = nn::upsample_nearest2(h);
  }
  return out_(nn::silu(out_norm_(h)));
}

nn::ParamList Denoiser::params() const {
  nn::ParamList p;
  in_.collect(p, "den.in");
  time1_.collect(p, "den.time1");
  time2_.collect(p, "den.time2");
  for (int s = 0; s < kDenoiserStages; ++s) {
    const std::string pre = "den.down" + std::to_string(s);
    const DownStage& d = down_[s];
    p.push_back({pre + ".cec.w_fix", d.cec.w_fix, base_frozen_});
    p.push_back({pre + ".cec.w_ext", d.cec.w_ext, false});
    p.push_back({pre + ".cec.bias", d.cec.bias, false});
    p.push_back({pre + ".lum_proj", d.lum_proj, false});
    d.time.collect(p, pre + ".time");
    d.norm.collect(p, pre + ".norm");
    d.attn.wq.collect(p, pre + ".attn.wq");
    d.attn.wk.collect(p, pre + ".attn.wk");
    d.attn.wv.collect(p, pre + ".attn.wv");
    d.attn.wo.collect(p, pre + ".attn.wo");
  }
  mid_.collect(p, "den.mid");
  for (int s = 0; s < kDenoiserStages; ++s) {
    const std::string pre = "den.up" + std::to_string(s);
    up_[s].conv.collect(p, pre + ".conv");
    up_[s].time.collect(p, pre + ".time");
    up_[s].norm.collect(p, pre + ".norm");
  }
  out_norm_.collect(p, "den.out_norm");
  out_.collect(p, "den.out");
  return p;
}

nn::ParamList Denoiser::fixed_params() const {
  nn::ParamList p;
  for (int s = 0; s < kDenoiserStages; ++s) {
    p.push_back({"den.down" + std::to_string(s) + ".cec.w_fix", down_[s].cec.w_fix, true});
  }
  return p;
}

}  // namespace lcad
