#include "lcad/diffusion.hpp"

#include <cmath>
#include <numbers>

#include "lcad/error.hpp"
#include "lcad/ops.hpp"

namespace lcad {

using nn::Var;

NoiseSchedule NoiseSchedule::cosine(int T, double s) {
  if (T < 2) throw ConfigError("noise schedule needs at least 2 steps");
  auto f = [&](double t) {
    const double c = std::cos((t / T + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  };
  NoiseSchedule sched;
  sched.T = T;
  sched.alpha_bar.resize(static_cast<std::size_t>(T));
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    const double beta = std::min(1.0 - f(t + 1) / f(t), 0.999);
    prod *= 1.0 - beta;
    sched.alpha_bar[static_cast<std::size_t>(t)] = prod;
  }
  return sched;
}

double NoiseSchedule::at(int t) const {
  if (t == -1) return 1.0;
  if (t < 0 || t >= T) throw ValidationError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(T) + ")");
  return alpha_bar[static_cast<std::size_t>(t)];
}

std::vector<int> NoiseSchedule::sampling_timesteps(int steps) const {
  if (steps < 1 || steps > T) throw ConfigError("sampling steps must lie in [1, T]");
  const int stride = T / steps;
  std::vector<int> ts;
  for (int i = steps - 1; i >= 0; --i) ts.push_back(i * stride);
  return ts;
}

std::vector<double> forward_diffuse(std::span<const double> z0, int t, std::span<const double> eps,
                                    const NoiseSchedule& sched) {
  if (eps.size() != z0.size()) throw ShapeError("forward_diffuse: eps and z0 differ in size");
  if (t < 0 || t >= sched.T) throw ValidationError("forward_diffuse: timestep out of range");
  const double a = sched.alpha_bar[static_cast<std::size_t>(t)];
  const double sa = std::sqrt(a), sb = std::sqrt(1.0 - a);
  std::vector<double> out(z0.size());
  for (std::size_t i = 0; i < z0.size(); ++i) out[i] = sa * z0[i] + sb * eps[i];
  return out;
}

std::vector<double> ddim_step(std::span<const double> z_t, std::span<const double> eps_hat, int t, int t_prev,
                              const NoiseSchedule& sched) {
  if (t_prev >= t) throw ValidationError("ddim_step: t_prev must be smaller than t");
  if (eps_hat.size() != z_t.size()) throw ShapeError("ddim_step: eps and z differ in size");
  const double a = sched.at(t), ap = sched.at(t_prev);
  const double sa = std::sqrt(a), sb = std::sqrt(1.0 - a);
  const double spa = std::sqrt(ap), spb = std::sqrt(1.0 - ap);
  std::vector<double> out(z_t.size());
  for (std::size_t i = 0; i < z_t.size(); ++i) {
    const double z0 = (z_t[i] - sb * eps_hat[i]) / sa;
    out[i] = spa * z0 + spb * eps_hat[i];
  }
  return out;
}

std::vector<double> cfg_combine(std::span<const double> eps_cond, std::span<const double> eps_scarce, double scale) {
  if (eps_cond.size() != eps_scarce.size()) throw ShapeError("cfg: branch sizes differ");
  if (!(scale >= 0.0) || !std::isfinite(scale)) throw ConfigError("guidance scale must be finite and >= 0");
  std::vector<double> out(eps_cond.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - scale) * eps_scarce[i] + scale * eps_cond[i];
  return out;
}

Var concat_batch(const Var& a, const Var& b) {
  if (!a.defined() || !b.defined()) return Var();
  nn::Shape sa = a.shape(), sb = b.shape();
  if (sa.size() != sb.size() || !std::equal(sa.begin() + 1, sa.end(), sb.begin() + 1)) {
    throw ShapeError("concat_batch: " + nn::shape_str(sa) + " vs " + nn::shape_str(sb));
  }
  std::vector<double> d(a.values().begin(), a.values().end());
  d.insert(d.end(), b.values().begin(), b.values().end());
  sa[0] += sb[0];
  return Var::from(sa, std::move(d));
}

TextEmbedding concat_batch(const TextEmbedding& a, const TextEmbedding& b) {
  if (a.n_tok != b.n_tok || a.width != b.width) throw ShapeError("concat_batch: text embedding layout differs");
  TextEmbedding out = a;
  out.batch = a.batch + b.batch;
  out.sequence = concat_batch(a.sequence, b.sequence);
  out.valid.insert(out.valid.end(), b.valid.begin(), b.valid.end());
  return out;
}

LuminancePyramid concat_batch(const LuminancePyramid& a, const LuminancePyramid& b) {
  if (a.levels.size() != b.levels.size()) throw ShapeError("concat_batch: pyramid depth differs");
  LuminancePyramid out;
  for (std::size_t i = 0; i < a.levels.size(); ++i) out.levels.push_back(concat_batch(a.levels[i], b.levels[i]));
  return out;
}

Var slice_batch(const Var& x, int begin, int count) {
  nn::Shape s = x.shape();
  const std::size_t per = x.size() / static_cast<std::size_t>(s[0]);
  s[0] = count;
  std::vector<double> d(x.values().begin() + static_cast<std::ptrdiff_t>(begin * per),
                        x.values().begin() + static_cast<std::ptrdiff_t>((begin + count) * per));
  return Var::from(s, std::move(d));
}

namespace {

bool same_embedding(const TextEmbedding& a, const TextEmbedding& b) {
  return a.batch == b.batch && a.valid == b.valid && a.sequence.shape() == b.sequence.shape() &&
         std::equal(a.sequence.values().begin(), a.sequence.values().end(), b.sequence.values().begin());
}

}  // namespace

std::vector<double> cfg_predict(const Denoiser& den, const Var& z_t, int t, const TextEmbedding& cond,
                                const TextEmbedding& scarce, const LuminancePyramid* pyr, double scale,
                                const AttentionOverrideSet* cond_overrides, AttentionMapSet* cond_maps) {
  if (!(scale >= 0.0) || !std::isfinite(scale)) throw ConfigError("guidance scale must be finite and >= 0");
  nn::NoGradGuard guard;
  const int nb = z_t.dim(0);
  if (cond_overrides == nullptr && same_embedding(cond, scarce)) {
    std::vector<int> ts(static_cast<std::size_t>(nb), t);
    Var e = den.predict(z_t, ts, cond, pyr, nullptr, cond_maps);
    return {e.values().begin(), e.values().end()};
  }
  std::vector<int> ts(static_cast<std::size_t>(2 * nb), t);
  Var z2 = concat_batch(z_t, z_t);
  TextEmbedding txt = concat_batch(cond, scarce);
  LuminancePyramid pyr2;
  if (pyr != nullptr) pyr2 = concat_batch(*pyr, *pyr);
  AttentionOverrideSet ov2;
  if (cond_overrides != nullptr) {
    for (const auto& blk : cond_overrides->blocks) {
      std::vector<nn::AttentionOverride> b2;
      if (!blk.empty()) {
        b2 = blk;
        b2.resize(static_cast<std::size_t>(2 * nb));
      }
      ov2.blocks.push_back(std::move(b2));
    }
  }
  AttentionMapSet maps2;
  Var e = den.predict(z2, ts, txt, pyr != nullptr ? &pyr2 : nullptr, cond_overrides != nullptr ? &ov2 : nullptr,
                      cond_maps != nullptr ? &maps2 : nullptr);
  if (cond_maps != nullptr) {
    *cond_maps = maps2;
    for (auto& tr : cond_maps->blocks) {
      const std::size_t half = static_cast<std::size_t>(nb) * tr.p * tr.t;
      tr.n = nb;
      tr.raw.resize(half);
      tr.weights.resize(half);
    }
  }
  const std::size_t half = e.size() / 2;
  return cfg_combine(e.values().subspan(0, half), e.values().subspan(half), scale);
}

Var latent_loss(std::span<const LatentExample> batch, const nn::Shape& latent_shape, const EpsPredictor& predictor,
                const NoiseSchedule& sched, const GuidanceConfig& guidance, nn::Rng& rng, LatentBatchInfo* info) {
  if (batch.empty()) throw ValidationError("latent_loss: empty batch");
  if (guidance.drop_prob < 0.0 || guidance.drop_prob > 1.0) throw ConfigError("drop_prob must lie in [0, 1]");
  std::size_t per = 1;
  for (int d : latent_shape) per *= static_cast<std::size_t>(d);
  const int nb = static_cast<int>(batch.size());
  std::uniform_int_distribution<int> tdist(0, sched.T - 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::bernoulli_distribution drop(guidance.drop_prob);
  const auto scarce_words = split_words(guidance.scarce_text);

  std::vector<int> ts(static_cast<std::size_t>(nb)), idx(static_cast<std::size_t>(nb));
  std::vector<double> zt, eps_all;
  std::vector<std::vector<std::string>> words;
  LatentBatchInfo local;
  for (int n = 0; n < nb; ++n) {
    const LatentExample& ex = batch[static_cast<std::size_t>(n)];
    if (ex.z0.size() != per) throw ShapeError("latent_loss: latent size mismatch");
    const int t = tdist(rng);
    std::vector<double> eps(per);
    for (double& e : eps) e = gauss(rng);
    auto z = forward_diffuse(ex.z0, t, eps, sched);
    zt.insert(zt.end(), z.begin(), z.end());
    eps_all.insert(eps_all.end(), eps.begin(), eps.end());
    ts[static_cast<std::size_t>(n)] = t;
    idx[static_cast<std::size_t>(n)] = ex.index;
    if (!ex.scarce) {
      ++local.eligible;
      if (drop(rng)) {
        ++local.replaced;
        words.push_back(scarce_words);
        continue;
      }
    }
    words.push_back(ex.words);
  }
  nn::Shape full{nb};
  full.insert(full.end(), latent_shape.begin(), latent_shape.end());
  Var pred = predictor(Var::from(full, std::move(zt)), ts, words, idx);
  if (pred.size() != eps_all.size()) throw ShapeError("latent_loss: predictor output shape mismatch");
  local.timesteps = ts;
  if (info != nullptr) *info = local;
  return nn::mse_const(pred, eps_all);
}

Var sample_ddim(const Denoiser& den, const Var& z_T, const TextEmbedding& cond, const TextEmbedding& scarce,
                const LuminancePyramid* pyr, const NoiseSchedule& sched, int steps, double scale, long* evaluations) {
  const auto ts = sched.sampling_timesteps(steps);
  Var z = z_T.clone();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const int t_prev = i + 1 < ts.size() ? ts[i + 1] : -1;
    auto eps = cfg_predict(den, z, t, cond, scarce, pyr, scale);
    if (evaluations != nullptr) ++*evaluations;
    z = Var::from(z.shape(), ddim_step(z.values(), eps, t, t_prev, sched));
  }
  return z;
}

}  // namespace lcad
