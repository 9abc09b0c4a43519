#include "lcad/instsample.hpp"

#include <algorithm>
#include <cmath>

#include "lcad/error.hpp"

namespace lcad {

using nn::Var;

ContourMask ContourMask::make(int height, int width, std::vector<std::uint8_t> mask, int instance, int token) {
  if (height <= 0 || width <= 0 || mask.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError("contour mask size does not match " + std::to_string(height) + "x" + std::to_string(width));
  }
  bool any = false;
  for (auto& v : mask) {
    v = v != 0 ? 1 : 0;
    any = any || v;
  }
  if (!any) throw ValidationError("contour mask for instance " + std::to_string(instance) + " is empty");
  return ContourMask{height, width, std::move(mask), instance, token};
}

ContourMask dilate(const ContourMask& m, int radius) {
  ContourMask out = m;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      std::uint8_t v = 0;
      for (int dy = -radius; dy <= radius && !v; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= m.height) continue;
        for (int dx = -radius; dx <= radius; ++dx) {
          const int xx = x + dx;
          if (xx >= 0 && xx < m.width && m.mask[static_cast<std::size_t>(yy) * m.width + xx]) {
            v = 1;
            break;
          }
        }
      }
      out.mask[static_cast<std::size_t>(y) * m.width + x] = v;
    }
  }
  return out;
}

std::vector<double> downsample_mask(const ContourMask& mask, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0 || mask.height % out_h != 0 || mask.width % out_w != 0) {
    throw ShapeError("downsample_mask: " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                     " does not divide into " + std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  const int fy = mask.height / out_h, fx = mask.width / out_w;
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w, 0.0);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      out[static_cast<std::size_t>(y / fy) * out_w + x / fx] += mask.mask[static_cast<std::size_t>(y) * mask.width + x];
    }
  }
  const double inv = 1.0 / (fy * fx);
  for (double& v : out) v *= inv;
  return out;
}

std::vector<double> downsample_mask_level(const ContourMask& mask, int level, int base_h, int base_w, int levels) {
  if (level < 0 || level >= levels) {
    throw ValidationError("attention level " + std::to_string(level) + " out of range [0, " +
                          std::to_string(levels) + ")");
  }
  return downsample_mask(mask, base_h >> level, base_w >> level);
}

namespace {

void check_pair(std::span<const double> m, std::span<const double> target) {
  if (m.size() != target.size() || m.empty()) throw ShapeError("bce: prediction and target sizes differ");
}

double clampp(double v) { return std::clamp(v, kBceClamp, 1.0 - kBceClamp); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

double bce(std::span<const double> m, std::span<const double> target) {
  check_pair(m, target);
  double acc = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double p = clampp(m[i]);
    acc -= target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p);
  }
  return acc / static_cast<double>(m.size());
}

std::vector<double> bce_grad(std::span<const double> m, std::span<const double> target) {
  check_pair(m, target);
  const double inv = 1.0 / static_cast<double>(m.size());
  std::vector<double> g(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double p = clampp(m[i]);
    g[i] = (p - target[i]) / (p * (1.0 - p)) * inv;
  }
  return g;
}

RefineResult refine_attention(std::span<const double> raw, std::span<const double> target, const RefineConfig& cfg) {
  if (!std::isfinite(cfg.lambda) || cfg.lambda < 0.0) throw ConfigError("lambda must be finite and >= 0");
  check_pair(raw, target);
  std::vector<double> m(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) m[i] = sigmoid(raw[i]);
  RefineResult res;
  res.loss_before = bce(m, target);
  res.lambda_used = cfg.lambda;
  for (int it = 0; it < std::max(1, cfg.inner_iters); ++it) {
    const double before = bce(m, target);
    const auto g = bce_grad(m, target);
    for (double v : g) {
      if (!std::isfinite(v)) throw GenerationError("refine_attention: non-finite BCE gradient");
    }
    double lambda = cfg.lambda;
    std::vector<double> cand(m.size());
    for (int tries = 0; tries < 60; ++tries) {
      for (std::size_t i = 0; i < m.size(); ++i) cand[i] = clampp(m[i] - lambda * g[i]);
      if (lambda == 0.0 || !cfg.backtrack || bce(cand, target) <= before) break;
      lambda *= 0.5;
    }
    if (lambda == 0.0) {
      cand = m;
    }
    res.lambda_used = lambda;
    m = std::move(cand);
  }
  res.values = std::move(m);
  res.loss_after = bce(res.values, target);
  return res;
}

std::vector<int> refine_blocks(const RefineConfig& cfg, int base_h, int base_w, int levels) {
  std::vector<int> out;
  if (!cfg.blocks.empty()) {
    for (int b : cfg.blocks) {
      if (b < 0 || b >= levels) throw ConfigError("refine block " + std::to_string(b) + " out of range");
      out.push_back(b);
    }
    return out;
  }
  for (int l = 0; l < levels; ++l) {
    if ((base_h >> l) >= cfg.min_resolution && (base_w >> l) >= cfg.min_resolution) out.push_back(l);
  }
  return out;
}

Var sample_instance_aware(const Denoiser& den, const Var& z_T, const TextEmbedding& cond, const TextEmbedding& scarce,
                          std::span<const InstanceRequest> requests, const LuminancePyramid* pyr,
                          const NoiseSchedule& sched, int steps, double scale, const RefineConfig& cfg,
                          SamplerStats* stats) {
  const int nb = z_T.dim(0);
  const int bh = z_T.dim(2), bw = z_T.dim(3);
  if (static_cast<int>(requests.size()) != nb) throw ShapeError("sample_instance_aware: one request per sample");
  bool any_masks = false;
  for (int n = 0; n < nb; ++n) {
    for (const auto& m : requests[static_cast<std::size_t>(n)].masks) {
      if (m.token < 0 || m.token >= cond.n_tok || !cond.valid[static_cast<std::size_t>(n) * cond.n_tok + m.token]) {
        throw ValidationError("instance " + std::to_string(m.instance) + " is bound to token position " +
                              std::to_string(m.token) + ", which is padding");
      }
      any_masks = true;
    }
  }
  const auto blocks = refine_blocks(cfg, bh, bw, den.attention_blocks());
  const auto ts = sched.sampling_timesteps(steps);
  SamplerStats local;
  SamplerStats& st = stats != nullptr ? *stats : local;
  st.evaluations = 0;
  Var z = z_T.clone();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const int t_prev = i + 1 < ts.size() ? ts[i + 1] : -1;
    std::vector<double> eps;
    if (!any_masks) {
      eps = cfg_predict(den, z, t, cond, scarce, pyr, scale);
      ++st.evaluations;
    } else {
      AttentionMapSet maps;
      {
        nn::NoGradGuard guard;
        std::vector<int> tv(static_cast<std::size_t>(nb), t);
        den.predict(z, tv, cond, pyr, nullptr, &maps);
      }
      ++st.evaluations;
      AttentionOverrideSet ov;
      ov.blocks.assign(static_cast<std::size_t>(den.attention_blocks()), {});
      for (int l : blocks) {
        const auto& tr = maps.blocks[static_cast<std::size_t>(l)];
        const int hl = maps.heights[static_cast<std::size_t>(l)], wl = maps.widths[static_cast<std::size_t>(l)];
        auto& blk = ov.blocks[static_cast<std::size_t>(l)];
        blk.assign(static_cast<std::size_t>(nb), {});
        for (int n = 0; n < nb; ++n) {
          const auto& masks = requests[static_cast<std::size_t>(n)].masks;
          if (masks.empty()) continue;
          nn::AttentionOverride& o = blk[static_cast<std::size_t>(n)];
          const std::size_t np = static_cast<std::size_t>(tr.p), nc = masks.size();
          o.values.assign(np * nc, 0.0);
          std::vector<double> raw(np);
          for (std::size_t j = 0; j < nc; ++j) {
            const ContourMask& m = masks[j];
            if (std::find(o.columns.begin(), o.columns.end(), m.token) != o.columns.end()) {
              throw ValidationError("two masks bound to token position " + std::to_string(m.token));
            }
            o.columns.push_back(m.token);
            for (std::size_t p = 0; p < np; ++p) {
              raw[p] = tr.raw[(static_cast<std::size_t>(n) * np + p) * tr.t + m.token];
            }
            std::vector<double> vals;
            if (cfg.self_override) {
              vals.resize(np);
              for (std::size_t p = 0; p < np; ++p) vals[p] = sigmoid(raw[p]);
            } else {
              vals = refine_attention(raw, downsample_mask(m, hl, wl), cfg).values;
            }
            for (std::size_t p = 0; p < np; ++p) o.values[p * nc + j] = vals[p];
          }
        }
      }
      AttentionMapSet second;
      eps = cfg_predict(den, z, t, cond, scarce, pyr, scale, &ov, stats != nullptr ? &second : nullptr);
      ++st.evaluations;
      if (stats != nullptr) {
        st.first_maps = std::move(maps);
        st.second_maps = std::move(second);
      }
    }
    z = Var::from(z.shape(), ddim_step(z.values(), eps, t, t_prev, sched));
  }
  return z;
}

}  // namespace lcad
