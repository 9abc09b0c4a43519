#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lcad/denoiser.hpp"
#include "lcad/layers.hpp"

namespace lcad {

struct NoiseSchedule {
  int T = 0;
  std::vector<double> alpha_bar;

  /// Cosine schedule (offset s) with per-step beta capped at 0.999.
  static NoiseSchedule cosine(int T = 1000, double s = 0.008);
  /// alpha_bar at t, with t == -1 denoting the clean endpoint (1.0).
  double at(int t) const;
  /// `steps` uniformly spaced timesteps in descending order, starting at
  /// (steps-1) * T/steps and ending at 0.
  std::vector<int> sampling_timesteps(int steps) const;
};

struct GuidanceConfig {
  double scale = 3.0;
  std::string scarce_text = "a colorful image";
  double drop_prob = 0.30;
};

std::vector<double> forward_diffuse(std::span<const double> z0, int t, std::span<const double> eps,
                                    const NoiseSchedule& sched);

/// Deterministic DDIM update from t to t_prev (t_prev == -1 is the endpoint).
std::vector<double> ddim_step(std::span<const double> z_t, std::span<const double> eps_hat, int t, int t_prev,
                              const NoiseSchedule& sched);

/// (1 - scale) * eps_scarce + scale * eps_cond
std::vector<double> cfg_combine(std::span<const double> eps_cond, std::span<const double> eps_scarce, double scale);

/// Guided prediction for N samples. Conditional and scarce branches run as
/// one batch of 2N unless the embeddings are identical, in which case a single
/// branch is evaluated. `cond_overrides` applies to the conditional branch
/// only; `cond_maps` receives the conditional branch's attention maps.
std::vector<double> cfg_predict(const Denoiser& den, const nn::Var& z_t, int t, const TextEmbedding& cond,
                                const TextEmbedding& scarce, const LuminancePyramid* pyr, double scale,
                                const AttentionOverrideSet* cond_overrides = nullptr,
                                AttentionMapSet* cond_maps = nullptr);

/// One training example of the latent stage.
struct LatentExample {
  std::vector<double> z0;          ///< standardized latent, C*h*w
  std::vector<std::string> words;  ///< description words
  bool scarce = false;             ///< already at the scarce level
  int index = 0;                   ///< handle for cached luminance features
};

struct LatentBatchInfo {
  int eligible = 0;  ///< complete/partial descriptions in the batch
  int replaced = 0;  ///< of those, replaced by the scarce description
  std::vector<int> timesteps;
};

/// eps predictor used by latent_loss: (z_t [N,C,h,w], t, descriptions, example handles).
using EpsPredictor = std::function<nn::Var(const nn::Var&, std::span<const int>,
                                           const std::vector<std::vector<std::string>>&, std::span<const int>)>;

/// Mean squared noise-prediction error with scarce-description replacement.
nn::Var latent_loss(std::span<const LatentExample> batch, const nn::Shape& latent_shape, const EpsPredictor& predictor,
                    const NoiseSchedule& sched, const GuidanceConfig& guidance, nn::Rng& rng,
                    LatentBatchInfo* info = nullptr);

/// Plain guided DDIM sampling from z_T ([N,C,h,w]).
nn::Var sample_ddim(const Denoiser& den, const nn::Var& z_T, const TextEmbedding& cond, const TextEmbedding& scarce,
                    const LuminancePyramid* pyr, const NoiseSchedule& sched, int steps, double scale,
                    long* evaluations = nullptr);

/// Batch helpers (inference only).
nn::Var concat_batch(const nn::Var& a, const nn::Var& b);
TextEmbedding concat_batch(const TextEmbedding& a, const TextEmbedding& b);
LuminancePyramid concat_batch(const LuminancePyramid& a, const LuminancePyramid& b);
nn::Var slice_batch(const nn::Var& x, int begin, int count);

}  // namespace lcad
