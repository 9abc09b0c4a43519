#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace lcad {

struct Ablation {
  bool no_lic = false;  ///< decoder receives a zeroed luminance pyramid
  bool no_slr = false;  ///< CEC blocks receive no luminance
  bool no_iss = false;  ///< plain guided DDIM

  bool any() const { return no_lic || no_slr || no_iss; }
  std::string label() const;
  /// Comma-separated subset of no_lic,no_slr,no_iss ("" for none).
  static Ablation parse(const std::string& list);
  std::string to_list() const;
};

/// Flat key = value run configuration.
struct RunConfig {
  std::string data_dir = "data";
  std::string run_dir = "runs/default";
  std::uint64_t seed = 1;

  int train_scenes = 2000;
  int eval_scenes = 200;
  int image_size = 64;
  int min_instances = 1;
  int max_instances = 4;

  int enc_width0 = 16, enc_width1 = 32, enc_width2 = 32;
  int latent_channels = 4;
  int den_width0 = 32, den_width1 = 64, den_width2 = 64;
  int n_ext = 16;
  int attn_heads = 1;
  int n_tok = 16;
  int text_width = 64;

  int pixel_ae_epochs = 12;
  int pixel_lum_epochs = 24;
  int pixel_batch = 8;
  double pixel_lr = 2e-3;
  int disc_warmup_epochs = 4;
  double alpha = 1.0;
  double beta = 0.5;
  double adv_balance = 0.1;
  int n_win = 7;

  int base_epochs = 20;
  int latent_epochs = 120;
  int latent_batch = 16;
  double latent_lr = 1e-3;

  int T = 1000;
  int sampling_steps = 50;
  double guidance_scale = 3.0;
  double drop_prob = 0.30;

  double lambda = 20.0;
  bool refine_backtrack = true;
  int refine_inner_iters = 1;
  int refine_min_resolution = 8;

  int sample_batch = 20;
  Ablation ablate;

  static RunConfig load(const std::filesystem::path& path);
  /// Applies one "key=value" assignment; throws ConfigError on unknown keys
  /// or malformed values.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  std::string to_text() const;
  /// FNV-1a of to_text().
  std::uint64_t hash() const;
  /// Hash over the fields that determine trained weights.
  std::uint64_t training_hash() const;
  /// Hash over the fields that determine the pixel-stage weights.
  std::uint64_t pixel_hash() const;
};

}  // namespace lcad
