#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lcad/compression.hpp"
#include "lcad/config.hpp"
#include "lcad/denoiser.hpp"
#include "lcad/diffusion.hpp"
#include "lcad/instsample.hpp"
#include "lcad/metrics.hpp"
#include "lcad/synthdata.hpp"
#include "lcad/textenc.hpp"

namespace lcad {

namespace fs = std::filesystem;

using LogFn = std::function<void(const std::string&)>;

CompressionConfig compression_config(const RunConfig& cfg);
DenoiserConfig denoiser_config(const RunConfig& cfg);
TextEncoderConfig text_config(const RunConfig& cfg);
GenerationConfig generation_config(const RunConfig& cfg);

fs::path train_dir(const RunConfig& cfg);
fs::path eval_dir(const RunConfig& cfg);
fs::path pixel_checkpoint_path(const RunConfig& cfg);
fs::path latent_checkpoint_path(const RunConfig& cfg);

/// Scene seeds of the two splits are drawn from disjoint streams.
std::uint64_t split_seed(std::uint64_t seed, bool eval);

std::vector<SceneSample> generate_split(const RunConfig& cfg, bool eval);
void gen_data(const RunConfig& cfg, const LogFn& log);

struct EpochRecord {
  std::string stage;
  int epoch = 0;
  double loss = 0.0;
  double seconds = 0.0;
};

struct PixelTrainResult {
  std::vector<EpochRecord> epochs;
};

struct LatentTrainResult {
  std::vector<EpochRecord> epochs;
  std::uint64_t fixed_checksum_before = 0, fixed_checksum_after = 0;
  std::uint64_t pixel_checksum_before = 0, pixel_checksum_after = 0;
  std::uint64_t pixel_file_hash_before = 0, pixel_file_hash_after = 0;
  double replaced_fraction = 0.0;
};

PixelTrainResult train_pixel(const RunConfig& cfg, const LogFn& log);
LatentTrainResult train_latent(const RunConfig& cfg, const LogFn& log);

struct Models {
  CompressionModel pixel;
  Vocabulary vocab;
  TextEncoder text;
  Denoiser den;
  NoiseSchedule sched;
};

Models build_models(const RunConfig& cfg);
Models load_models(const RunConfig& cfg);
/// Pixel stage only (denoiser left untrained).
Models load_pixel_models(const RunConfig& cfg);

TextEmbedding embed_words(const Models& m, const std::vector<std::vector<std::string>>& words);

struct ColorizeRequest {
  GrayImage gray;
  std::vector<std::string> words;
  std::vector<ContourMask> masks;  ///< full resolution
  std::uint64_t seed = 0;
};

struct ColorizeOutput {
  RgbImage image;
  long evaluations = 0;
};

/// Batched colorization honouring the ablation switches of cfg.
std::vector<ColorizeOutput> colorize(const Models& m, const RunConfig& cfg, std::vector<ColorizeRequest> requests,
                                     const LogFn& log = {});

/// Builds ISS masks at image resolution from a scene's description bindings.
std::vector<ContourMask> scene_masks(const SceneSample& s, const Description& d, int dilation = 0);

struct BenchmarkOptions {
  Level level = Level::kComplete;
  Ablation ablate;
  int mask_dilation = 0;
  int limit = 0;  ///< 0 = whole split
  std::string label;
};

struct BenchmarkResult {
  MetricReport report;
  double mean_l_psnr = 0.0;  ///< output L vs input L (peak 100)
  std::vector<RgbImage> outputs;
};

BenchmarkResult run_benchmark(const Models& m, const RunConfig& cfg, const std::vector<SceneSample>& scenes,
                              const BenchmarkOptions& opts, const LogFn& log = {});

struct ReconstructionResult {
  double psnr_with_pyramid = 0.0;
  double psnr_zero_pyramid = 0.0;
};

ReconstructionResult reconstruction_psnr(const Models& m, const std::vector<SceneSample>& scenes);

/// Writes <run_dir>/<command>.config and <run_dir>/<command>.meta.json.
void write_run_metadata(const RunConfig& cfg, const std::string& command, const std::string& started,
                        const std::string& extra_json = "{}");
std::string timestamp_now();
std::uint64_t file_hash(const fs::path& path);

}  // namespace lcad
