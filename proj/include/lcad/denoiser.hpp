#pragma once

#include <vector>

#include "lcad/compression.hpp"
#include "lcad/layers.hpp"
#include "lcad/ops.hpp"
#include "lcad/textenc.hpp"

namespace lcad {

inline constexpr int kDenoiserStages = 3;

struct DenoiserConfig {
  int latent_channels = 4;
  int channels[kDenoiserStages] = {32, 64, 64};
  int n_ext[kDenoiserStages] = {16, 16, 16};
  /// Channel count of the pyramid level nearest to the latent scales (the
  /// coarsest level; input to the per-stage projections).
  int lum_channels = 32;
  int heads = 1;
  int time_dim = 64;
  int text_width = 64;
  int groups = 8;
};

/// Convolution over [f ; y_lum] with the kernel split into a frozen part for
/// f and a zero-initialized extension for the luminance channels.
/// Stride 1, zero padding.
struct CecKernel {
  nn::Var w_fix;  ///< [C_out, N_fix, k, k]
  nn::Var w_ext;  ///< [C_out, N_ext, k, k]
  nn::Var bias;   ///< [C_out]

  static CecKernel make(int n_fix, int n_ext, int c_out, int k, nn::Rng& rng);
  int n_fix() const { return w_fix.dim(1); }
  int n_ext() const { return w_ext.dim(1); }
  int c_out() const { return w_fix.dim(0); }
  int kernel() const { return w_fix.dim(2); }
};

/// y_lum undefined evaluates the fixed branch only (vanilla convolution).
nn::Var cec_forward(const nn::Var& f, const nn::Var& y_lum, const CecKernel& kernel);

/// Picks the available pyramid level closest in scale to the target, resizes it
/// bilinearly to (out_h, out_w) and projects channels with `projection`
/// ([N_ext, C_level, 1, 1]). Undefined levels are skipped.
nn::Var resize_luminance(const LuminancePyramid& pyr, int out_h, int out_w, const nn::Var& projection);
/// Index of the level resize_luminance would select.
int select_pyramid_level(const LuminancePyramid& pyr, int out_h, int out_w);

/// Cross-attention maps of one forward pass; blocks[l] is [N, h_l*w_l, N_tok].
struct AttentionMapSet {
  std::vector<nn::AttentionTrace> blocks;
  std::vector<int> heights, widths;
};

/// Per block, per sample replacement columns; an entry with no columns leaves
/// that sample untouched.
struct AttentionOverrideSet {
  std::vector<std::vector<nn::AttentionOverride>> blocks;
};

std::vector<double> timestep_embedding(int t, int dim);

class Denoiser {
 public:
  Denoiser() = default;
  Denoiser(const DenoiserConfig& config, nn::Rng& rng);

  const DenoiserConfig& config() const { return config_; }
  int attention_blocks() const { return kDenoiserStages; }

  /// z_t: [N, C, h, w]; t: one timestep per sample. pyr == nullptr feeds no
  /// luminance into the CEC blocks (equivalent to the plain-convolution base).
  nn::Var predict(const nn::Var& z_t, std::span<const int> t, const TextEmbedding& text,
                  const LuminancePyramid* pyr, const AttentionOverrideSet* overrides = nullptr,
                  AttentionMapSet* maps = nullptr) const;

  /// Freezes the base kernels of every CEC block.
  void freeze_base(bool frozen);
  bool base_frozen() const { return base_frozen_; }

  nn::ParamList params() const;
  /// Parameter names holding frozen base kernels.
  nn::ParamList fixed_params() const;
  const CecKernel& cec(int stage) const { return down_[stage].cec; }
  CecKernel& cec(int stage) { return down_[stage].cec; }

 private:
  struct CrossAttention {
    nn::Linear wq, wk, wv, wo;
  };
  struct DownStage {
    CecKernel cec;
    nn::Var lum_proj;  ///< [N_ext, C_level, 1, 1]
    nn::Linear time;
    nn::GroupNorm norm;
    CrossAttention attn;
  };
  struct UpStage {
    nn::Conv2d conv;
    nn::Linear time;
    nn::GroupNorm norm;
  };

  DenoiserConfig config_;
  nn::Conv2d in_;
  nn::Linear time1_, time2_;
  DownStage down_[kDenoiserStages];
  nn::Conv2d mid_;
  UpStage up_[kDenoiserStages];
  nn::GroupNorm out_norm_;
  nn::Conv2d out_;
  bool base_frozen_ = false;
};

}  // namespace lcad
