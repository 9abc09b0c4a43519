#include "lcad/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "lcad/error.hpp"

namespace lcad {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("invalid value '" + v + "' for key '" + key + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("invalid boolean '" + v + "' for key '" + key + "'");
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
  int stage = 0;  // 0: inference only, 1: pixel and latent stages, 2: latent stage
};

std::string fmt_double(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

#define LCAD_INT(name, stage)                                                                             \
  {#name,                                                                                                 \
   {[](RunConfig& c, const std::string& k, const std::string& v) { c.name = parse_number<int>(k, v); }, \
    [](const RunConfig& c) { return std::to_string(c.name); }, stage}}
#define LCAD_DBL(name, stage)                                                                                \
  {#name,                                                                                                    \
   {[](RunConfig& c, const std::string& k, const std::string& v) { c.name = parse_number<double>(k, v); }, \
    [](const RunConfig& c) { return fmt_double(c.name); }, stage}}
#define LCAD_STR(name, stage)                                                               \
  {#name, {[](RunConfig& c, const std::string&, const std::string& v) { c.name = v; }, \
           [](const RunConfig& c) { return c.name; }, stage}}
#define LCAD_BOOL(name, stage)                                                                        \
  {#name, {[](RunConfig& c, const std::string& k, const std::string& v) { c.name = parse_bool(k, v); }, \
           [](const RunConfig& c) { return std::string(c.name ? "true" : "false"); }, stage}}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> f = {
      LCAD_STR(data_dir, 0),
      LCAD_STR(run_dir, 0),
      {"seed",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_number<std::uint64_t>(k, v); },
        [](const RunConfig& c) { return std::to_string(c.seed); }, 1}},
      LCAD_INT(train_scenes, 1),
      LCAD_INT(eval_scenes, 0),
      LCAD_INT(image_size, 1),
      LCAD_INT(min_instances, 1),
      LCAD_INT(max_instances, 1),
      LCAD_INT(enc_width0, 1),
      LCAD_INT(enc_width1, 1),
      LCAD_INT(enc_width2, 1),
      LCAD_INT(latent_channels, 1),
      LCAD_INT(den_width0, 2),
      LCAD_INT(den_width1, 2),
      LCAD_INT(den_width2, 2),
      LCAD_INT(n_ext, 2),
      LCAD_INT(attn_heads, 2),
      LCAD_INT(n_tok, 2),
      LCAD_INT(text_width, 2),
      LCAD_INT(pixel_ae_epochs, 1),
      LCAD_INT(pixel_lum_epochs, 1),
      LCAD_INT(pixel_batch, 1),
      LCAD_DBL(pixel_lr, 1),
      LCAD_INT(disc_warmup_epochs, 1),
      LCAD_DBL(alpha, 1),
      LCAD_DBL(beta, 1),
      LCAD_DBL(adv_balance, 1),
      LCAD_INT(n_win, 1),
      LCAD_INT(base_epochs, 2),
      LCAD_INT(latent_epochs, 2),
      LCAD_INT(latent_batch, 2),
      LCAD_DBL(latent_lr, 2),
      LCAD_INT(T, 2),
      LCAD_INT(sampling_steps, 0),
      LCAD_DBL(guidance_scale, 0),
      LCAD_DBL(drop_prob, 2),
      LCAD_DBL(lambda, 0),
      LCAD_BOOL(refine_backtrack, 0),
      LCAD_INT(refine_inner_iters, 0),
      LCAD_INT(refine_min_resolution, 0),
      LCAD_INT(sample_batch, 0),
      {"ablate",
       {[](RunConfig& c, const std::string&, const std::string& v) { c.ablate = Ablation::parse(v); },
        [](const RunConfig& c) { return c.ablate.to_list(); }, 0}},
  };
  return f;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::string Ablation::label() const {
  if (!any()) return "full";
  std::string s;
  if (no_lic) s += "W/o LIC ";
  if (no_slr) s += "W/o SLR ";
  if (no_iss) s += "W/o ISS ";
  s.pop_back();
  return s;
}

Ablation Ablation::parse(const std::string& list) {
  Ablation a;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    if (item == "no_lic") {
      a.no_lic = true;
    } else if (item == "no_slr") {
      a.no_slr = true;
    } else if (item == "no_iss") {
      a.no_iss = true;
    } else {
      throw ConfigError("unknown ablation '" + item + "' (expected no_lic, no_slr, no_iss)");
    }
  }
  return a;
}

std::string Ablation::to_list() const {
  std::vector<std::string> parts;
  if (no_lic) parts.emplace_back("no_lic");
  if (no_slr) parts.emplace_back("no_slr");
  if (no_iss) parts.emplace_back("no_iss");
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) s += (i ? "," : "") + parts[i];
  return s;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& f = fields();
  auto it = f.find(key);
  if (it == f.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, key, value);
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  RunConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  c.validate();
  return c;
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(train_scenes > 0, "train_scenes must be positive");
  require(eval_scenes > 0, "eval_scenes must be positive");
  require(image_size >= 16 && image_size % 16 == 0, "image_size must be a multiple of 16 and >= 16");
  require(min_instances >= 1 && max_instances <= 4 && min_instances <= max_instances,
          "instance range must satisfy 1 <= min <= max <= 4");
  require(n_tok >= 4, "n_tok must be >= 4");
  require(attn_heads >= 1 && text_width % attn_heads == 0, "attn_heads must divide text_width");
  require(pixel_batch > 0 && latent_batch > 0 && sample_batch > 0, "batch sizes must be positive");
  require(pixel_lr > 0 && latent_lr > 0, "learning rates must be positive");
  require(n_win >= 3 && n_win % 2 == 1, "n_win must be odd and >= 3");
  require(T >= 2 && sampling_steps >= 1 && sampling_steps <= T, "need 1 <= sampling_steps <= T");
  require(guidance_scale >= 0, "guidance_scale must be >= 0");
  require(drop_prob >= 0 && drop_prob <= 1, "drop_prob must lie in [0, 1]");
  require(lambda >= 0 && std::isfinite(lambda), "lambda must be finite and >= 0");
  require(refine_inner_iters >= 1, "refine_inner_iters must be >= 1");
  require(alpha >= 0 && beta >= 0 && adv_balance >= 0, "alpha, beta and adv_balance must be >= 0");
  require(pixel_ae_epochs >= 0 && pixel_lum_epochs >= 0 && base_epochs >= 0 && latent_epochs >= 0,
          "epoch counts must be >= 0");
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(*this) + "\n";
  return out;
}

std::uint64_t RunConfig::hash() const { return fnv1a(to_text()); }

std::uint64_t RunConfig::training_hash() const {
  std::string s;
  for (const auto& [k, f] : fields()) {
    if (f.stage != 0) s += k + "=" + f.get(*this) + "\n";
  }
  return fnv1a(s);
}

std::uint64_t RunConfig::pixel_hash() const {
  std::string s;
  for (const auto& [k, f] : fields()) {
    if (f.stage == 1) s += k + "=" + f.get(*this) + "\n";
  }
  return fnv1a(s);
}

}  // namespace lcad
