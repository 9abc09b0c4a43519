#include "lcad/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "lcad/error.hpp"

namespace lcad {
namespace {

PaletteEntry entry(const char* name, double r, double g, double b, bool chromatic) {
  return {name, {r, g, b}, srgb_to_lab({r, g, b}), chromatic};
}

constexpr int kSuper = 4;

struct Placed {
  ShapeKind kind;
  double cx, cy, size;
  std::vector<double> coverage;
};

bool inside(ShapeKind kind, double cx, double cy, double size, double x, double y) {
  switch (kind) {
    case ShapeKind::kCircle:
      return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= size * size;
    case ShapeKind::kSquare:
      return std::fabs(x - cx) <= size / 2 && std::fabs(y - cy) <= size / 2;
    case ShapeKind::kTriangle: {
      // Upward equilateral triangle with side `size`, centred on its centroid.
      const double h = size * std::sqrt(3.0) / 2.0;
      const double top = cy - 2.0 * h / 3.0, bottom = cy + h / 3.0;
      if (y < top || y > bottom) return false;
      const double half = (y - top) / h * size / 2.0;
      return std::fabs(x - cx) <= half;
    }
  }
  return false;
}

double half_extent(ShapeKind kind, double size) {
  switch (kind) {
    case ShapeKind::kCircle:
      return size;
    case ShapeKind::kSquare:
      return size / 2;
    case ShapeKind::kTriangle:
      return size * std::sqrt(3.0) / 3.0;
  }
  return size;
}

double size_for_area(ShapeKind kind, double area) {
  switch (kind) {
    case ShapeKind::kCircle:
      return std::sqrt(area / M_PI);
    case ShapeKind::kSquare:
      return std::sqrt(area);
    case ShapeKind::kTriangle:
      return std::sqrt(area * 4.0 / std::sqrt(3.0));
  }
  return 0.0;
}

std::vector<double> rasterize(ShapeKind kind, double cx, double cy, double size, int n) {
  std::vector<double> cov(static_cast<std::size_t>(n) * n, 0.0);
  const double e = half_extent(kind, size) + 1.0;
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - e))), y1 = std::min(n - 1, static_cast<int>(std::ceil(cy + e)));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - e))), x1 = std::min(n - 1, static_cast<int>(std::ceil(cx + e)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = x + (sx + 0.5) / kSuper, py = y + (sy + 0.5) / kSuper;
          hits += inside(kind, cx, cy, size, px, py) ? 1 : 0;
        }
      }
      cov[static_cast<std::size_t>(y) * n + x] = static_cast<double>(hits) / (kSuper * kSuper);
    }
  }
  return cov;
}

std::string format_id(std::uint64_t seed) { return "scene_" + std::to_string(seed); }

}  // namespace

const std::vector<PaletteEntry>& palette() {
  static const std::vector<PaletteEntry> p = {
      entry("red", 0.85, 0.12, 0.10, true),     entry("green", 0.15, 0.60, 0.15, true),
      entry("blue", 0.12, 0.25, 0.85, true),    entry("yellow", 0.92, 0.85, 0.10, true),
      entry("orange", 0.98, 0.55, 0.05, true),  entry("purple", 0.50, 0.15, 0.65, true),
      entry("pink", 0.98, 0.55, 0.75, true),    entry("brown", 0.45, 0.28, 0.12, true),
      entry("black", 0.06, 0.06, 0.06, false),  entry("white", 0.95, 0.95, 0.95, false),
      entry("gray", 0.50, 0.50, 0.50, false),
  };
  return p;
}

const PaletteEntry& palette_entry(const std::string& name) {
  for (const auto& e : palette()) {
    if (e.name == name) return e;
  }
  throw ValidationError("unknown palette colour '" + name + "'");
}

bool is_color_word(const std::string& word) {
  return std::any_of(palette().begin(), palette().end(), [&](const PaletteEntry& e) { return e.name == word; });
}

const char* shape_noun(ShapeKind k) {
  switch (k) {
    case ShapeKind::kCircle:
      return "circle";
    case ShapeKind::kSquare:
      return "square";
    case ShapeKind::kTriangle:
      return "triangle";
  }
  return "circle";
}

ShapeKind shape_from_noun(const std::string& noun) {
  if (noun == "circle") return ShapeKind::kCircle;
  if (noun == "square") return ShapeKind::kSquare;
  if (noun == "triangle") return ShapeKind::kTriangle;
  throw ValidationError("unknown shape noun '" + noun + "'");
}

const char* level_name(Level l) {
  switch (l) {
    case Level::kComplete:
      return "complete";
    case Level::kPartial:
      return "partial";
    case Level::kScarce:
      return "scarce";
  }
  return "scarce";
}

Level level_from_name(const std::string& name) {
  if (name == "complete") return Level::kComplete;
  if (name == "partial") return Level::kPartial;
  if (name == "scarce") return Level::kScarce;
  throw ValidationError("unknown description level '" + name + "'");
}

std::string Description::text() const {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty() && t != ",") out += ' ';
    out += t;
  }
  return out;
}

std::uint64_t scene_seed(std::uint64_t base, std::uint64_t index) {
  // splitmix64 finalizer
  std::uint64_t z = base * 0x9E3779B97F4A7C15ull + index + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Description render_description(const std::vector<InstanceRecord>& instances, Level level, SceneRng& rng) {
  if (instances.empty()) throw ValidationError("render_description: no instances");
  Description d;
  d.level = level;
  if (level == Level::kScarce) {
    d.tokens = {"a", "colorful", "image"};
    return d;
  }
  std::vector<int> chosen(instances.size());
  std::iota(chosen.begin(), chosen.end(), 0);
  if (level == Level::kPartial) {
    const int n = static_cast<int>(instances.size());
    if (n < 2) {
      d.fell_back = true;
    } else {
      std::uniform_int_distribution<int> count(1, n - 1);
      const int k = count(rng);
      for (int i = n - 1; i > 0; --i) {
        std::uniform_int_distribution<int> pick(0, i);
        std::swap(chosen[static_cast<std::size_t>(i)], chosen[static_cast<std::size_t>(pick(rng))]);
      }
      chosen.resize(static_cast<std::size_t>(k));
      std::sort(chosen.begin(), chosen.end());
    }
  }
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    if (i > 0) d.tokens.emplace_back(",");
    const auto& inst = instances[static_cast<std::size_t>(chosen[i])];
    d.tokens.emplace_back("a");
    d.bindings.push_back({static_cast<int>(d.tokens.size()), chosen[i]});
    d.tokens.push_back(inst.color);
    d.tokens.push_back(inst.noun());
  }
  return d;
}

SceneSample generate_scene(std::uint64_t seed, const GenerationConfig& cfg) {
  const int n = cfg.size;
  if (n < 8) throw GenerationError("canvas must be at least 8x8");
  if (cfg.min_instances < 1 || cfg.max_instances < cfg.min_instances || cfg.max_instances > 4) {
    throw GenerationError("instance count range must satisfy 1 <= min <= max <= 4");
  }
  SceneRng rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double canvas = static_cast<double>(n) * n;

  std::vector<const PaletteEntry*> colors;
  for (const auto& e : palette()) {
    if (e.chromatic || cfg.allow_achromatic) colors.push_back(&e);
  }
  const int count = std::uniform_int_distribution<int>(cfg.min_instances, cfg.max_instances)(rng);
  if (count > static_cast<int>(colors.size())) throw GenerationError("more instances than colours");

  // Greedy placement; a layout that stalls is discarded and restarted.
  const double max_frac = std::min(cfg.max_area_fraction, std::max(cfg.min_area_fraction * 1.2, 0.5 / count));
  constexpr int kAttemptsPerLayout = 50;
  std::vector<Placed> placed;
  std::vector<std::uint8_t> occupied;  // instance footprints dilated by one pixel
  double union_area = 0.0;
  int attempts = 0, layout_attempts = kAttemptsPerLayout;
  while (static_cast<int>(placed.size()) < count) {
    if (++attempts > cfg.max_retries) {
      throw GenerationError("could not place " + std::to_string(count) + " instances on a " + std::to_string(n) +
                            "x" + std::to_string(n) + " canvas after " + std::to_string(cfg.max_retries) +
                            " attempts (seed " + std::to_string(seed) + ")");
    }
    if (++layout_attempts > kAttemptsPerLayout) {
      placed.clear();
      occupied.assign(static_cast<std::size_t>(n) * n, 0);
      union_area = 0.0;
      layout_attempts = 0;
    }
    const auto kind = static_cast<ShapeKind>(std::uniform_int_distribution<int>(0, 2)(rng));
    const double frac = cfg.min_area_fraction * 1.15 + u01(rng) * std::max(0.0, max_frac - cfg.min_area_fraction * 1.15);
    const double size = size_for_area(kind, frac * canvas);
    const double e = half_extent(kind, size) + 1.0;
    if (2 * e >= n) continue;
    const double cx = e + u01(rng) * (n - 2 * e), cy = e + u01(rng) * (n - 2 * e);
    auto cov = rasterize(kind, cx, cy, size, n);
    bool clash = false;
    double area = 0.0;
    for (std::size_t i = 0; i < cov.size(); ++i) {
      if (cov[i] > 0.0 && occupied[i]) clash = true;
      if (cov[i] >= 0.5) area += 1.0;
    }
    if (clash || area < cfg.min_area_fraction * canvas) continue;
    if ((union_area + area) > cfg.max_union_fraction * canvas) continue;
    union_area += area;
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        if (cov[static_cast<std::size_t>(y) * n + x] <= 0.0) continue;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy >= 0 && yy < n && xx >= 0 && xx < n) occupied[static_cast<std::size_t>(yy) * n + xx] = 1;
          }
        }
      }
    }
    placed.push_back({kind, cx, cy, size, std::move(cov)});
  }

  // Distinct colours per scene.
  for (std::size_t i = colors.size() - 1; i > 0; --i) {
    std::swap(colors[i], colors[std::uniform_int_distribution<std::size_t>(0, i)(rng)]);
  }

  // Achromatic background gradient.
  const double l0 = cfg.background_l_min + u01(rng) * (cfg.background_l_max - cfg.background_l_min);
  const double l1 = cfg.background_l_min + u01(rng) * (cfg.background_l_max - cfg.background_l_min);
  const double ang = u01(rng) * 2.0 * M_PI;
  const double gx = std::cos(ang), gy = std::sin(ang);
  std::vector<double> data(static_cast<std::size_t>(n) * n * 3);
  const double half = (n - 1) / 2.0;
  const double reach = half * (std::fabs(gx) + std::fabs(gy));
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double t = reach > 0 ? ((x - half) * gx + (y - half) * gy) / reach : 0.0;
      const double l = l0 + (l1 - l0) * 0.5 * (t + 1.0);
      const Rgb c = lab_to_srgb({l, 0.0, 0.0});
      const double gray = (c[0] + c[1] + c[2]) / 3.0;
      for (int ch = 0; ch < 3; ++ch) data[(static_cast<std::size_t>(y) * n + x) * 3 + ch] = gray;
    }
  }

  SceneSample s;
  s.seed = seed;
  s.id = format_id(seed);
  for (std::size_t i = 0; i < placed.size(); ++i) {
    const Placed& p = placed[i];
    const PaletteEntry& pe = *colors[i];
    const double sang = u01(rng) * 2.0 * M_PI;
    const double sx = std::cos(sang), sy = std::sin(sang);
    const double ext = half_extent(p.kind, p.size);
    InstanceRecord rec;
    rec.shape = p.kind;
    rec.color = pe.name;
    rec.mask = {n, n, std::vector<std::uint8_t>(static_cast<std::size_t>(n) * n, 0)};
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const std::size_t idx = static_cast<std::size_t>(y) * n + x;
        const double c = p.coverage[idx];
        if (c <= 0.0) continue;
        rec.mask.bits[idx] = c >= 0.5 ? 1 : 0;
        const double g = std::clamp(((x + 0.5 - p.cx) * sx + (y + 0.5 - p.cy) * sy) / ext, -1.0, 1.0);
        const Rgb fill = lab_to_srgb({std::clamp(pe.lab[0] + cfg.shading_l * g, 0.0, 100.0), pe.lab[1], pe.lab[2]});
        for (int ch = 0; ch < 3; ++ch) {
          double& d = data[idx * 3 + ch];
          d = c * fill[ch] + (1.0 - c) * d;
        }
      }
    }
    s.instances.push_back(std::move(rec));
  }
  s.image = RgbImage::create(n, n, std::move(data));
  s.gray = to_grayscale(s.image);
  for (Level l : {Level::kComplete, Level::kPartial, Level::kScarce}) {
    s.descriptions[l] = render_description(s.instances, l, rng);
  }
  return s;
}

namespace {

nlohmann::json description_json(const Description& d) {
  nlohmann::json bindings = nlohmann::json::array();
  for (const auto& b : d.bindings) bindings.push_back({{"token", b.token}, {"instance", b.instance}});
  return {{"text", d.text()}, {"tokens", d.tokens}, {"bindings", bindings}, {"fell_back", d.fell_back}};
}

std::string mask_name(const std::string& id, std::size_t k) { return id + "_" + std::to_string(k) + ".png"; }

}  // namespace

void write_manifest(const std::vector<SceneSample>& samples, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  nlohmann::json scenes = nlohmann::json::array();
  for (const auto& s : samples) {
    save_image(s.image, dir / "images" / (s.id + ".png"));
    nlohmann::json insts = nlohmann::json::array();
    for (std::size_t k = 0; k < s.instances.size(); ++k) {
      const auto& inst = s.instances[k];
      save_mask(inst.mask, dir / "masks" / mask_name(s.id, k));
      insts.push_back({{"mask", "masks/" + mask_name(s.id, k)}, {"shape", inst.noun()}, {"color", inst.color}});
    }
    nlohmann::json descs = nlohmann::json::object();
    for (const auto& [level, d] : s.descriptions) descs[level_name(level)] = description_json(d);
    scenes.push_back({{"id", s.id},
                      {"seed", s.seed},
                      {"image", "images/" + s.id + ".png"},
                      {"instances", insts},
                      {"descriptions", descs}});
  }
  nlohmann::json names = nlohmann::json::array();
  for (const auto& e : palette()) names.push_back(e.name);
  const nlohmann::json doc = {{"schema_version", kManifestSchemaVersion}, {"palette", names}, {"scenes", scenes}};
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw IoError("cannot write manifest in " + dir.string());
  os << doc.dump(2) << '\n';
}

Dataset read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream is(path);
  if (!is) throw IoError("missing manifest: " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  }
  const int version = doc.value("schema_version", -1);
  if (version != kManifestSchemaVersion) {
    throw IoError("manifest schema version " + std::to_string(version) + " does not match supported version " +
                  std::to_string(kManifestSchemaVersion) + ": " + path.string());
  }
  Dataset ds;
  try {
    for (const auto& js : doc.at("scenes")) {
      SceneSample s;
      s.id = js.at("id").get<std::string>();
      s.seed = js.at("seed").get<std::uint64_t>();
      s.image = load_image(dir / js.at("image").get<std::string>());
      s.gray = to_grayscale(s.image);
      std::vector<std::uint8_t> seen(s.image.pixels(), 0);
      for (const auto& ji : js.at("instances")) {
        InstanceRecord rec;
        rec.shape = shape_from_noun(ji.at("shape").get<std::string>());
        rec.color = ji.at("color").get<std::string>();
        palette_entry(rec.color);
        const auto mpath = dir / ji.at("mask").get<std::string>();
        if (!std::filesystem::exists(mpath)) {
          throw IoError("scene " + s.id + ": missing mask file " + mpath.string());
        }
        rec.mask = load_mask(mpath);
        if (rec.mask.height != s.image.height || rec.mask.width != s.image.width) {
          throw IoError("scene " + s.id + ": mask size does not match image");
        }
        for (std::size_t i = 0; i < seen.size(); ++i) {
          if (rec.mask.bits[i] && seen[i]++) throw IoError("scene " + s.id + ": overlapping instance masks");
        }
        s.instances.push_back(std::move(rec));
      }
      for (const auto& [lname, jd] : js.at("descriptions").items()) {
        Description d;
        d.level = level_from_name(lname);
        d.tokens = jd.at("tokens").get<std::vector<std::string>>();
        d.fell_back = jd.value("fell_back", false);
        for (const auto& jb : jd.at("bindings")) {
          d.bindings.push_back({jb.at("token").get<int>(), jb.at("instance").get<int>()});
        }
        s.descriptions[d.level] = std::move(d);
      }
      ds.scenes.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("manifest " + path.string() + " does not follow the schema: " + e.what());
  }
  return ds;
}

}  // namespace lcad
