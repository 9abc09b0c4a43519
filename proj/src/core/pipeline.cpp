#include "lcad/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "lcad/checkpoint.hpp"
#include "lcad/error.hpp"
#include "lcad/optim.hpp"

namespace lcad {

using nn::Var;
using json = nlohmann::json;

CompressionConfig compression_config(const RunConfig& cfg) {
  CompressionConfig c;
  c.image_size = cfg.image_size;
  c.latent_channels = cfg.latent_channels;
  c.widths[0] = cfg.enc_width0;
  c.widths[1] = cfg.enc_width1;
  c.widths[2] = cfg.enc_width2;
  c.n_win = cfg.n_win;
  c.alpha = cfg.alpha;
  c.beta = cfg.beta;
  c.adv_balance = cfg.adv_balance;
  return c;
}

DenoiserConfig denoiser_config(const RunConfig& cfg) {
  DenoiserConfig d;
  d.latent_channels = cfg.latent_channels;
  d.channels[0] = cfg.den_width0;
  d.channels[1] = cfg.den_width1;
  d.channels[2] = cfg.den_width2;
  for (int s = 0; s < kDenoiserStages; ++s) d.n_ext[s] = cfg.n_ext;
  d.lum_channels = cfg.enc_width2;
  d.heads = cfg.attn_heads;
  d.text_width = cfg.text_width;
  return d;
}

TextEncoderConfig text_config(const RunConfig& cfg) {
  TextEncoderConfig t;
  t.n_tok = cfg.n_tok;
  t.width = cfg.text_width;
  t.heads = cfg.attn_heads;
  return t;
}

GenerationConfig generation_config(const RunConfig& cfg) {
  GenerationConfig g;
  g.size = cfg.image_size;
  g.min_instances = cfg.min_instances;
  g.max_instances = cfg.max_instances;
  return g;
}

fs::path train_dir(const RunConfig& cfg) { return fs::path(cfg.data_dir) / "train"; }
fs::path eval_dir(const RunConfig& cfg) { return fs::path(cfg.data_dir) / "eval"; }
fs::path pixel_checkpoint_path(const RunConfig& cfg) { return fs::path(cfg.run_dir) / "pixel.ckpt"; }
fs::path latent_checkpoint_path(const RunConfig& cfg) { return fs::path(cfg.run_dir) / "latent.ckpt"; }

std::uint64_t split_seed(std::uint64_t seed, bool eval) {
  return eval ? scene_seed(seed ^ 0x5eed5eed5eed5eedULL, 0xe7a1) : seed;
}

std::string timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::uint64_t file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h = (h ^ static_cast<unsigned char>(buf[i])) * 1099511628211ULL;
    }
  }
  return h;
}

namespace {

std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

double cosine_lr(double base, int epoch, int epochs) {
  if (epochs <= 1) return base;
  const double c = 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / (epochs - 1)));
  return base * (0.1 + 0.9 * c);
}

void emit(const LogFn& log, const std::string& msg) {
  if (log) log(msg);
}

std::vector<std::size_t> shuffled(std::size_t n, nn::Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

double elapsed(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

json epochs_json(const std::vector<EpochRecord>& epochs) {
  json a = json::array();
  for (const auto& e : epochs) a.push_back({{"stage", e.stage}, {"epoch", e.epoch}, {"loss", e.loss}, {"seconds", e.seconds}});
  return a;
}

void set_trainable(const nn::ParamList& params, bool trainable) {
  for (const auto& p : params) {
    Var v = p.var;
    v.set_requires_grad(trainable);
  }
}

std::vector<RgbImage> batch_images(const std::vector<SceneSample>& scenes, std::span<const std::size_t> idx) {
  std::vector<RgbImage> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(scenes[i].image);
  return out;
}

std::vector<GrayImage> batch_grays(const std::vector<SceneSample>& scenes, std::span<const std::size_t> idx) {
  std::vector<GrayImage> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(scenes[i].gray);
  return out;
}

LuminancePyramid zero_pyramid(const LuminancePyramid& p) {
  LuminancePyramid z;
  for (const auto& l : p.levels) z.levels.push_back(Var::zeros(l.shape()));
  return z;
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw Error(what + " (missing " + p.string() + ")");
}

void check_hash(const nn::Checkpoint& ck, const std::string& key, std::uint64_t expected, const fs::path& path) {
  auto it = ck.meta.find(key);
  if (it != ck.meta.end() && it->second != hex(expected)) {
    throw ConfigError("checkpoint " + path.string() +
                      " was trained with a different model/training configuration; retrain or use its config");
  }
}

}  // namespace

std::vector<SceneSample> generate_split(const RunConfig& cfg, bool eval) {
  const int count = eval ? cfg.eval_scenes : cfg.train_scenes;
  const auto gen = generation_config(cfg);
  const std::uint64_t base = split_seed(cfg.seed, eval);
  std::vector<SceneSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(generate_scene(scene_seed(base, static_cast<std::uint64_t>(i)), gen));
  return out;
}

void gen_data(const RunConfig& cfg, const LogFn& log) {
  cfg.validate();
  for (bool eval : {false, true}) {
    const auto dir = eval ? eval_dir(cfg) : train_dir(cfg);
    auto scenes = generate_split(cfg, eval);
    write_manifest(scenes, dir);
    emit(log, "wrote " + std::to_string(scenes.size()) + " scenes to " + dir.string());
  }
}

Models build_models(const RunConfig& cfg) {
  cfg.validate();
  Models m;
  nn::Rng rng_pixel(cfg.seed * 0x9E3779B97F4A7C15ULL + 1);
  nn::Rng rng_latent(cfg.seed * 0x9E3779B97F4A7C15ULL + 2);
  m.pixel = CompressionModel(compression_config(cfg), rng_pixel);
  m.vocab = Vocabulary::standard();
  m.text = TextEncoder(text_config(cfg), m.vocab.size(), rng_latent);
  m.den = Denoiser(denoiser_config(cfg), rng_latent);
  m.sched = NoiseSchedule::cosine(cfg.T);
  return m;
}

namespace {

void save_pixel(const Models& m, const RunConfig& cfg) {
  nn::Checkpoint ck;
  ck.meta["stage"] = "pixel";
  ck.meta["pixel_hash"] = hex(cfg.pixel_hash());
  ck.add(m.pixel.all_params());
  const int c = cfg.latent_channels;
  ck.tensors["latent.mean"] = {{c}, m.pixel.latent_mean, false};
  ck.tensors["latent.std"] = {{c}, m.pixel.latent_std, false};
  save_checkpoint(pixel_checkpoint_path(cfg), ck);
}

void restore_pixel(Models& m, const RunConfig& cfg) {
  const auto path = pixel_checkpoint_path(cfg);
  require_file(path, "pixel-stage checkpoint not found; run train-pixel first");
  auto ck = nn::load_checkpoint(path);
  if (ck.meta.find("pixel_hash") == ck.meta.end()) throw IoError(path.string() + ": not a pixel-stage checkpoint");
  check_hash(ck, "pixel_hash", cfg.pixel_hash(), path);
  auto params = m.pixel.all_params();
  ck.restore(params);
  m.pixel.latent_mean = ck.at("latent.mean").values;
  m.pixel.latent_std = ck.at("latent.std").values;
}

}  // namespace

Models load_pixel_models(const RunConfig& cfg) {
  Models m = build_models(cfg);
  restore_pixel(m, cfg);
  return m;
}

Models load_models(const RunConfig& cfg) {
  Models m = load_pixel_models(cfg);
  const auto path = latent_checkpoint_path(cfg);
  require_file(path, "latent-stage checkpoint not found; run train-latent first");
  auto ck = nn::load_checkpoint(path);
  check_hash(ck, "training_hash", cfg.training_hash(), path);
  auto params = m.den.params();
  ck.restore(params);
  auto tparams = m.text.params();
  ck.restore(tparams);
  m.den.freeze_base(true);
  return m;
}

PixelTrainResult train_pixel(const RunConfig& cfg, const LogFn& log) {
  const std::string started = timestamp_now();
  require_file(train_dir(cfg) / "manifest.json", "training data not found; run gen-data first");
  Dataset data = read_manifest(train_dir(cfg));
  const auto& scenes = data.scenes;
  if (scenes.empty()) throw ValidationError("training split is empty");
  fs::create_directories(cfg.run_dir);
  Models m = build_models(cfg);
  nn::Rng rng(cfg.seed * 31 + 7);
  PixelTrainResult result;

  nn::AdamOptions gopt;
  gopt.lr = cfg.pixel_lr;
  nn::AdamOptions dopt;
  dopt.lr = cfg.pixel_lr * 0.5;
  dopt.beta1 = 0.5;
  nn::Adam disc_opt(m.pixel.discriminator_params(), dopt);

  const int total_epochs = cfg.pixel_ae_epochs + cfg.pixel_lum_epochs;
  auto run_stage = [&](const std::string& stage, int epochs, int epoch_offset, bool with_lum) {
    nn::ParamList trainable;
    if (with_lum) {
      set_trainable(m.pixel.encoder_params(), false);
      set_trainable(m.pixel.decoder_params(), false);
      trainable = m.pixel.luminance_params();
    } else {
      trainable = m.pixel.encoder_params();
      for (auto& p : m.pixel.decoder_params()) trainable.push_back(p);
    }
    nn::Adam opt(trainable, gopt);
    for (int e = 0; e < epochs; ++e) {
      const auto t0 = std::chrono::steady_clock::now();
      const int global_epoch = epoch_offset + e;
      const bool use_disc = global_epoch >= cfg.disc_warmup_epochs && cfg.alpha > 0.0;
      opt.set_lr(cosine_lr(cfg.pixel_lr, e, epochs));
      const auto order = shuffled(scenes.size(), rng);
      double loss_sum = 0.0, rec_sum = 0.0;
      int batches = 0;
      for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.pixel_batch)) {
        const std::size_t n = std::min(order.size() - b, static_cast<std::size_t>(cfg.pixel_batch));
        std::span<const std::size_t> idx(order.data() + b, n);
        const auto imgs = batch_images(scenes, idx);
        Var x = images_to_tensor(imgs);
        Var z;
        LuminancePyramid pyr;
        if (with_lum) {
          {
            nn::NoGradGuard guard;
            z = m.pixel.encode(x);
          }
          const auto grays = batch_grays(scenes, idx);
          pyr = m.pixel.luminance(grays_to_tensor(grays));
        } else {
          z = m.pixel.encode(x);
        }
        Var xh = m.pixel.decode(z, with_lum ? &pyr : nullptr);
        const auto step = m.pixel.pixel_step(x, xh, use_disc);
        opt.zero_grad();
        nn::backward(nn::sum(nn::mul_const(xh, step.grad)));
        opt.step();
        if (use_disc) {
          disc_opt.zero_grad();
          Var dl = m.pixel.discriminator_loss(x, xh);
          nn::backward(dl);
          disc_opt.step();
        }
        loss_sum += step.total;
        rec_sum += step.rec;
        ++batches;
      }
      EpochRecord rec{stage, global_epoch + 1, loss_sum / batches, elapsed(t0)};
      result.epochs.push_back(rec);
      char buf[160];
      std::snprintf(buf, sizeof buf, "[%s] epoch %d/%d loss %.5f rec %.5f%s (%.1fs)", stage.c_str(), global_epoch + 1,
                    total_epochs, rec.loss, rec_sum / batches, use_disc ? " +disc" : "", rec.seconds);
      emit(log, buf);
    }
  };
  run_stage("pixel-ae", cfg.pixel_ae_epochs, 0, false);

  // Per-channel latent statistics from the (now frozen) encoder.
  {
    nn::NoGradGuard guard;
    const int c = cfg.latent_channels;
    std::vector<double> s(static_cast<std::size_t>(c), 0.0), q(static_cast<std::size_t>(c), 0.0);
    double count = 0.0;
    std::vector<std::size_t> all(scenes.size());
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t b = 0; b < all.size(); b += 32) {
      const std::size_t n = std::min<std::size_t>(32, all.size() - b);
      Var z = m.pixel.encode(images_to_tensor(batch_images(scenes, std::span(all.data() + b, n))));
      const std::size_t hw = static_cast<std::size_t>(z.dim(2)) * z.dim(3);
      for (std::size_t i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
          const double* p = z.data() + (i * c + ch) * hw;
          for (std::size_t k = 0; k < hw; ++k) {
            s[static_cast<std::size_t>(ch)] += p[k];
            q[static_cast<std::size_t>(ch)] += p[k] * p[k];
          }
        }
      }
      count += static_cast<double>(n * hw);
    }
    for (int ch = 0; ch < c; ++ch) {
      const double mu = s[static_cast<std::size_t>(ch)] / count;
      const double var = std::max(q[static_cast<std::size_t>(ch)] / count - mu * mu, 1e-8);
      m.pixel.latent_mean[static_cast<std::size_t>(ch)] = mu;
      m.pixel.latent_std[static_cast<std::size_t>(ch)] = std::sqrt(var);
    }
  }

  run_stage("pixel-lum", cfg.pixel_lum_epochs, cfg.pixel_ae_epochs, true);
  save_pixel(m, cfg);
  json extra;
  extra["epochs"] = epochs_json(result.epochs);
  extra["latent_mean"] = m.pixel.latent_mean;
  extra["latent_std"] = m.pixel.latent_std;
  extra["checkpoint"] = pixel_checkpoint_path(cfg).string();
  write_run_metadata(cfg, "train-pixel", started, extra.dump());
  return result;
}

TextEmbedding embed_words(const Models& m, const std::vector<std::vector<std::string>>& words) {
  const int n_tok = m.text.config().n_tok;
  std::vector<int> tokens;
  tokens.reserve(words.size() * static_cast<std::size_t>(n_tok));
  for (const auto& w : words) {
    if (static_cast<int>(w.size()) > n_tok) {
      throw ValidationError("description has " + std::to_string(w.size()) + " tokens; the encoder holds " +
                            std::to_string(n_tok));
    }
    auto t = tokenize_words(w, m.vocab, n_tok);
    tokens.insert(tokens.end(), t.begin(), t.end());
  }
  return m.text.encode(tokens, static_cast<int>(words.size()));
}

LatentTrainResult train_latent(const RunConfig& cfg, const LogFn& log) {
  const std::string started = timestamp_now();
  const auto pixel_path = pixel_checkpoint_path(cfg);
  if (!fs::exists(pixel_path)) {
    throw Error("train-latent requires the pixel stage: checkpoint " + pixel_path.string() +
                " not found (run train-pixel first)");
  }
  require_file(train_dir(cfg) / "manifest.json", "training data not found; run gen-data first");
  LatentTrainResult result;
  result.pixel_file_hash_before = file_hash(pixel_path);
  Models m = load_pixel_models(cfg);
  const auto pixel_params = m.pixel.all_params();
  set_trainable(pixel_params, false);
  result.pixel_checksum_before = nn::param_checksum(pixel_params);

  Dataset data = read_manifest(train_dir(cfg));
  const auto& scenes = data.scenes;
  const std::size_t ns = scenes.size();
  if (ns == 0) throw ValidationError("training split is empty");

  // Cache standardized latents and coarsest luminance features.
  const int lat = cfg.image_size / kDownsample;
  const nn::Shape latent_shape{cfg.latent_channels, lat, lat};
  const std::size_t zsize = static_cast<std::size_t>(cfg.latent_channels) * lat * lat;
  const std::size_t fsize = static_cast<std::size_t>(cfg.enc_width2) * lat * lat;
  std::vector<double> z_cache(ns * zsize), f_cache(ns * fsize);
  {
    nn::NoGradGuard guard;
    std::vector<std::size_t> all(ns);
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t b = 0; b < ns; b += 32) {
      const std::size_t n = std::min<std::size_t>(32, ns - b);
      std::span<const std::size_t> idx(all.data() + b, n);
      Var z = m.pixel.standardize(m.pixel.encode(images_to_tensor(batch_images(scenes, idx))));
      std::copy(z.values().begin(), z.values().end(), z_cache.begin() + static_cast<std::ptrdiff_t>(b * zsize));
      LuminancePyramid pyr = m.pixel.luminance(grays_to_tensor(batch_grays(scenes, idx)));
      const Var& l2 = pyr.levels[2];
      std::copy(l2.values().begin(), l2.values().end(), f_cache.begin() + static_cast<std::ptrdiff_t>(b * fsize));
    }
  }
  emit(log, "cached latents and luminance features for " + std::to_string(ns) + " scenes");

  GuidanceConfig guidance;
  guidance.drop_prob = cfg.drop_prob;
  nn::Rng rng(cfg.seed * 131 + 17);
  long eligible_total = 0, replaced_total = 0;
  const auto scarce_words = split_words(kScarceText);

  auto run_stage = [&](const std::string& stage, int epochs, int offset, bool with_lum) {
    m.den.freeze_base(with_lum);
    nn::ParamList trainable = m.den.params();
    for (auto& p : m.text.params()) trainable.push_back(p);
    nn::AdamOptions opt_cfg;
    opt_cfg.lr = cfg.latent_lr;
    nn::Adam opt(trainable, opt_cfg);
    std::discrete_distribution<int> level_dist({0.5, 0.3, 0.2});
    for (int e = 0; e < epochs; ++e) {
      const auto t0 = std::chrono::steady_clock::now();
      opt.set_lr(cosine_lr(cfg.latent_lr, e, epochs));
      const auto order = shuffled(ns, rng);
      double loss_sum = 0.0;
      int batches = 0;
      for (std::size_t b = 0; b < ns; b += static_cast<std::size_t>(cfg.latent_batch)) {
        const std::size_t n = std::min(ns - b, static_cast<std::size_t>(cfg.latent_batch));
        std::vector<LatentExample> batch(n);
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t si = order[b + i];
          LatentExample& ex = batch[i];
          ex.z0.assign(z_cache.begin() + static_cast<std::ptrdiff_t>(si * zsize),
                       z_cache.begin() + static_cast<std::ptrdiff_t>((si + 1) * zsize));
          ex.index = static_cast<int>(si);
          if (!with_lum) {
            ex.words = scarce_words;
            ex.scarce = true;
          } else {
            const Level lv = static_cast<Level>(level_dist(rng));
            ex.words = scenes[si].descriptions.at(lv).tokens;
            ex.scarce = lv == Level::kScarce;
          }
        }
        auto predictor = [&](const Var& zt, std::span<const int> ts, const std::vector<std::vector<std::string>>& words,
                             std::span<const int> handles) {
          TextEmbedding text = embed_words(m, words);
          if (!with_lum) return m.den.predict(zt, ts, text, nullptr);
          const int nb = static_cast<int>(handles.size());
          std::vector<double> f(static_cast<std::size_t>(nb) * fsize);
          for (int i = 0; i < nb; ++i) {
            const auto src = f_cache.begin() + static_cast<std::ptrdiff_t>(handles[static_cast<std::size_t>(i)] * fsize);
            std::copy(src, src + static_cast<std::ptrdiff_t>(fsize), f.begin() + static_cast<std::ptrdiff_t>(i * fsize));
          }
          LuminancePyramid pyr;
          pyr.levels = {Var(), Var(), Var::from({nb, cfg.enc_width2, lat, lat}, std::move(f))};
          return m.den.predict(zt, ts, text, &pyr);
        };
        LatentBatchInfo info;
        Var loss = latent_loss(batch, latent_shape, predictor, m.sched, guidance, rng, &info);
        eligible_total += info.eligible;
        replaced_total += info.replaced;
        opt.zero_grad();
        nn::backward(loss);
        opt.step();
        loss_sum += loss.item();
        ++batches;
      }
      EpochRecord rec{stage, offset + e + 1, loss_sum / batches, elapsed(t0)};
      result.epochs.push_back(rec);
      char buf[160];
      std::snprintf(buf, sizeof buf, "[%s] epoch %d/%d loss %.5f (%.1fs)", stage.c_str(), rec.epoch,
                    cfg.base_epochs + cfg.latent_epochs, rec.loss, rec.seconds);
      emit(log, buf);
    }
  };

  run_stage("latent-base", cfg.base_epochs, 0, false);
  m.den.freeze_base(true);
  result.fixed_checksum_before = nn::param_checksum(m.den.fixed_params());
  run_stage("latent-cec", cfg.latent_epochs, cfg.base_epochs, true);
  result.fixed_checksum_after = nn::param_checksum(m.den.fixed_params());
  result.pixel_checksum_after = nn::param_checksum(pixel_params);
  result.replaced_fraction = eligible_total > 0 ? static_cast<double>(replaced_total) / eligible_total : 0.0;

  nn::Checkpoint ck;
  ck.meta["stage"] = "latent";
  ck.meta["training_hash"] = hex(cfg.training_hash());
  ck.add(m.den.params());
  ck.add(m.text.params());
  save_checkpoint(latent_checkpoint_path(cfg), ck);
  result.pixel_file_hash_after = file_hash(pixel_path);

  json extra;
  extra["epochs"] = epochs_json(result.epochs);
  extra["fixed_checksum_before"] = hex(result.fixed_checksum_before);
  extra["fixed_checksum_after"] = hex(result.fixed_checksum_after);
  extra["pixel_checksum_before"] = hex(result.pixel_checksum_before);
  extra["pixel_checksum_after"] = hex(result.pixel_checksum_after);
  extra["pixel_file_hash_before"] = hex(result.pixel_file_hash_before);
  extra["pixel_file_hash_after"] = hex(result.pixel_file_hash_after);
  extra["scarce_replacement_fraction"] = result.replaced_fraction;
  extra["checkpoint"] = latent_checkpoint_path(cfg).string();
  write_run_metadata(cfg, "train-latent", started, extra.dump());
  return result;
}

std::vector<ContourMask> scene_masks(const SceneSample& s, const Description& d, int dilation) {
  std::vector<ContourMask> out;
  for (const Binding& b : d.bindings) {
    const Mask& mk = s.instances.at(static_cast<std::size_t>(b.instance)).mask;
    ContourMask cm = ContourMask::make(mk.height, mk.width, mk.bits, b.instance, b.token);
    out.push_back(dilation > 0 ? dilate(cm, dilation) : cm);
  }
  return out;
}

std::vector<ColorizeOutput> colorize(const Models& m, const RunConfig& cfg, std::vector<ColorizeRequest> requests,
                                     const LogFn& log) {
  nn::NoGradGuard guard;
  std::vector<ColorizeOutput> out;
  out.reserve(requests.size());
  RefineConfig refine;
  refine.lambda = cfg.lambda;
  refine.backtrack = cfg.refine_backtrack;
  refine.inner_iters = cfg.refine_inner_iters;
  refine.min_resolution = cfg.refine_min_resolution;
  const auto scarce_words = split_words(kScarceText);
  const int cz = cfg.latent_channels;
  for (std::size_t b = 0; b < requests.size(); b += static_cast<std::size_t>(cfg.sample_batch)) {
    const std::size_t n = std::min(requests.size() - b, static_cast<std::size_t>(cfg.sample_batch));
    std::vector<GrayImage> grays;
    std::vector<std::vector<std::string>> words;
    std::vector<InstanceRequest> inst(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto& r = requests[b + i];
      if (r.gray.height % kDownsample || r.gray.width % kDownsample) {
        throw ShapeError("grayscale input must have sides divisible by 4");
      }
      grays.push_back(r.gray);
      words.push_back(r.words.empty() ? scarce_words : r.words);
      if (!cfg.ablate.no_iss) inst[i].masks = std::move(r.masks);
    }
    for (const auto& g : grays) {
      if (g.height != grays[0].height || g.width != grays[0].width) throw ShapeError("colorize: mixed input sizes");
    }
    const int h = grays[0].height / kDownsample, w = grays[0].width / kDownsample;
    LuminancePyramid pyr = m.pixel.luminance(grays_to_tensor(grays));
    TextEmbedding cond = embed_words(m, words);
    TextEmbedding scarce = embed_words(m, std::vector<std::vector<std::string>>(n, scarce_words));
    std::vector<double> zt(n * static_cast<std::size_t>(cz) * h * w);
    const std::size_t per = zt.size() / n;
    for (std::size_t i = 0; i < n; ++i) {
      nn::Rng rng(requests[b + i].seed);
      std::normal_distribution<double> g(0.0, 1.0);
      for (std::size_t k = 0; k < per; ++k) zt[i * per + k] = g(rng);
    }
    Var z_T = Var::from({static_cast<int>(n), cz, h, w}, std::move(zt));
    SamplerStats stats;
    Var z0 = sample_instance_aware(m.den, z_T, cond, scarce, inst, cfg.ablate.no_slr ? nullptr : &pyr, m.sched,
                                   cfg.sampling_steps, cfg.guidance_scale, refine, &stats);
    LuminancePyramid zero;
    if (cfg.ablate.no_lic) zero = zero_pyramid(pyr);
    Var x = m.pixel.decode(m.pixel.destandardize(z0), cfg.ablate.no_lic ? &zero : &pyr);
    for (std::size_t i = 0; i < n; ++i) out.push_back({tensor_to_image(x, static_cast<int>(i)), stats.evaluations});
    emit(log, "colorized " + std::to_string(b + n) + "/" + std::to_string(requests.size()));
  }
  return out;
}

BenchmarkResult run_benchmark(const Models& m, const RunConfig& cfg, const std::vector<SceneSample>& scenes,
                              const BenchmarkOptions& opts, const LogFn& log) {
  RunConfig rc = cfg;
  rc.ablate = opts.ablate;
  const std::size_t count =
      opts.limit > 0 ? std::min(scenes.size(), static_cast<std::size_t>(opts.limit)) : scenes.size();
  std::vector<ColorizeRequest> reqs;
  for (std::size_t i = 0; i < count; ++i) {
    const SceneSample& s = scenes[i];
    const Description& d = s.descriptions.at(opts.level);
    ColorizeRequest r;
    r.gray = s.gray;
    r.words = d.tokens;
    r.masks = scene_masks(s, d, opts.mask_dilation);
    r.seed = scene_seed(cfg.seed ^ 0xc0107113ULL, s.seed);
    reqs.push_back(std::move(r));
  }
  auto outs = colorize(m, rc, std::move(reqs), log);
  BenchmarkResult res;
  res.report.label = opts.label.empty() ? opts.ablate.label() : opts.label;
  double lsum = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const SceneSample& s = scenes[i];
    const Description& d = s.descriptions.at(opts.level);
    res.report.images.push_back(evaluate_image(s.id, outs[i].image, s.image, s.instances, &d));
    lsum += psnr_planes(rgb_to_lab(outs[i].image).l, s.gray.l, 100.0);
    res.outputs.push_back(std::move(outs[i].image));
  }
  res.mean_l_psnr = count > 0 ? lsum / static_cast<double>(count) : 0.0;
  return res;
}

ReconstructionResult reconstruction_psnr(const Models& m, const std::vector<SceneSample>& scenes) {
  nn::NoGradGuard guard;
  ReconstructionResult r;
  std::vector<std::size_t> all(scenes.size());
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t b = 0; b < all.size(); b += 32) {
    const std::size_t n = std::min<std::size_t>(32, all.size() - b);
    std::span<const std::size_t> idx(all.data() + b, n);
    Var z = m.pixel.encode(images_to_tensor(batch_images(scenes, idx)));
    LuminancePyramid pyr = m.pixel.luminance(grays_to_tensor(batch_grays(scenes, idx)));
    LuminancePyramid zero = zero_pyramid(pyr);
    Var with = m.pixel.decode(z, &pyr);
    Var without = m.pixel.decode(z, &zero);
    for (std::size_t i = 0; i < n; ++i) {
      const RgbImage& gt = scenes[idx[i]].image;
      r.psnr_with_pyramid += psnr(tensor_to_image(with, static_cast<int>(i)), gt);
      r.psnr_zero_pyramid += psnr(tensor_to_image(without, static_cast<int>(i)), gt);
    }
  }
  r.psnr_with_pyramid /= static_cast<double>(scenes.size());
  r.psnr_zero_pyramid /= static_cast<double>(scenes.size());
  return r;
}

void write_run_metadata(const RunConfig& cfg, const std::string& command, const std::string& started,
                        const std::string& extra_json) {
  fs::create_directories(cfg.run_dir);
  write_text(fs::path(cfg.run_dir) / (command + ".config"), cfg.to_text());
  json meta;
  meta["command"] = command;
  meta["config_hash"] = hex(cfg.hash());
  meta["training_hash"] = hex(cfg.training_hash());
  meta["pixel_hash"] = hex(cfg.pixel_hash());
  meta["seed"] = cfg.seed;
  meta["started"] = started;
  meta["finished"] = timestamp_now();
  meta["details"] = json::parse(extra_json);
  write_text(fs::path(cfg.run_dir) / (command + ".meta.json"), meta.dump(2) + "\n");
}

}  // namespace lcad
