#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lcad/diffusion.hpp"

namespace lcad {

/// Binary instance contour bound to a colour token position.
struct ContourMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> mask;  ///< 0/1, row-major
  int instance = 0;
  int token = 0;

  static ContourMask make(int height, int width, std::vector<std::uint8_t> mask, int instance, int token);
};

/// Grows a mask by `radius` pixels (square structuring element).
ContourMask dilate(const ContourMask& m, int radius);

struct RefineConfig {
  double lambda = 20.0;
  /// Halve the step until BCE does not increase.
  bool backtrack = true;
  int inner_iters = 1;
  /// Blocks whose maps are smaller than this (in either dimension) are skipped.
  int min_resolution = 8;
  /// Explicit block list; empty selects every block above the resolution floor.
  std::vector<int> blocks;
  /// Override bound columns with sigmoid(raw) without refining.
  bool self_override = false;
};

/// Area-average pooling of a mask to (out_h, out_w); fractional coverage.
std::vector<double> downsample_mask(const ContourMask& mask, int out_h, int out_w);
/// Pools to the spatial size of attention block `level` for a latent of
/// base_h x base_w.
std::vector<double> downsample_mask_level(const ContourMask& mask, int level, int base_h, int base_w,
                                          int levels = kDenoiserStages);

inline constexpr double kBceClamp = 1e-7;

/// Mean binary cross-entropy; predictions clamped to [1e-7, 1 - 1e-7].
double bce(std::span<const double> m, std::span<const double> target);
/// d bce / d m at the clamped predictions.
std::vector<double> bce_grad(std::span<const double> m, std::span<const double> target);

struct RefineResult {
  std::vector<double> values;
  double lambda_used = 0.0;
  double loss_before = 0.0;
  double loss_after = 0.0;
};

/// m = sigmoid(raw); m_hat = clamp(m - lambda * grad BCE(m, target)).
RefineResult refine_attention(std::span<const double> raw, std::span<const double> target, const RefineConfig& cfg);

/// One scene of an instance-aware sampling batch.
struct InstanceRequest {
  std::vector<ContourMask> masks;  ///< may be empty
};

struct SamplerStats {
  long evaluations = 0;
  /// Attention maps of the first and second call at the last step (debugging / audits).
  AttentionMapSet first_maps, second_maps;
};

/// Instance-aware guided DDIM from z_T ([N,C,h,w]). Scenes without masks
/// follow plain guided sampling.
nn::Var sample_instance_aware(const Denoiser& den, const nn::Var& z_T, const TextEmbedding& cond,
                              const TextEmbedding& scarce, std::span<const InstanceRequest> requests,
                              const LuminancePyramid* pyr, const NoiseSchedule& sched, int steps, double scale,
                              const RefineConfig& cfg, SamplerStats* stats = nullptr);

/// Blocks that refinement applies to for a latent of base_h x base_w.
std::vector<int> refine_blocks(const RefineConfig& cfg, int base_h, int base_w, int levels = kDenoiserStages);

}  // namespace lcad
