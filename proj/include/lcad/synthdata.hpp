#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "lcad/imaging.hpp"

namespace lcad {

struct PaletteEntry {
  std::string name;
  Rgb rgb;
  Lab lab;
  bool chromatic = true;
};

/// The fixed 11-colour vocabulary.
const std::vector<PaletteEntry>& palette();
const PaletteEntry& palette_entry(const std::string& name);
bool is_color_word(const std::string& word);

enum class ShapeKind { kCircle, kSquare, kTriangle };
const char* shape_noun(ShapeKind k);
ShapeKind shape_from_noun(const std::string& noun);

enum class Level { kComplete, kPartial, kScarce };
const char* level_name(Level l);
Level level_from_name(const std::string& name);

inline constexpr const char* kScarceText = "a colorful image";

struct Binding {
  int token = 0;     ///< position of the colour word in Description::tokens
  int instance = 0;  ///< index into SceneSample::instances
  bool operator==(const Binding&) const = default;
};

struct Description {
  Level level = Level::kScarce;
  std::vector<std::string> tokens;
  std::vector<Binding> bindings;
  /// Set when a partial description was requested for a single instance.
  bool fell_back = false;

  std::string text() const;
  bool operator==(const Description&) const = default;
};

struct InstanceRecord {
  ShapeKind shape = ShapeKind::kCircle;
  std::string color;
  Mask mask;

  std::string noun() const { return shape_noun(shape); }
};

struct SceneSample {
  std::string id;
  std::uint64_t seed = 0;
  RgbImage image;
  GrayImage gray;
  std::vector<InstanceRecord> instances;
  std::map<Level, Description> descriptions;
};

struct GenerationConfig {
  int size = 64;
  int min_instances = 1;
  int max_instances = 4;
  double background_l_min = 25.0;
  double background_l_max = 75.0;
  double min_area_fraction = 0.05;
  double max_area_fraction = 0.14;
  double max_union_fraction = 0.80;
  double shading_l = 10.0;
  /// Instances draw from chromatic palette entries only unless set.
  bool allow_achromatic = false;
  int max_retries = 2000;
};

using SceneRng = std::mt19937_64;

/// Deterministic in (seed, config). Throws GenerationError when the layout
/// cannot be satisfied within the retry budget.
SceneSample generate_scene(std::uint64_t seed, const GenerationConfig& config = {});

Description render_description(const std::vector<InstanceRecord>& instances, Level level, SceneRng& rng);

/// Mixes a dataset seed and a scene index into a per-scene seed.
std::uint64_t scene_seed(std::uint64_t base, std::uint64_t index);

inline constexpr int kManifestSchemaVersion = 1;

struct Dataset {
  std::vector<SceneSample> scenes;
};

/// images/<id>.png, masks/<id>_<k>.png, manifest.json
void write_manifest(const std::vector<SceneSample>& samples, const std::filesystem::path& dir);
Dataset read_manifest(const std::filesystem::path& dir);

}  // namespace lcad
