#include <filesystem>
#include <fstream>
#include <set>

#include <doctest.h>

#include "lcad/error.hpp"
#include "lcad/metrics.hpp"
#include "lcad/synthdata.hpp"

using namespace lcad;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir(const std::string& name) {
  fs::path p = fs::path(LCAD_TEST_TMP) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

InstanceRecord instance(ShapeKind shape, const std::string& color) {
  InstanceRecord r;
  r.shape = shape;
  r.color = color;
  return r;
}

}  // namespace

TEST_CASE("palette has eleven well separated colours") {
  const auto& p = palette();
  REQUIRE(p.size() == 11);
  std::set<std::string> names;
  for (const auto& e : p) names.insert(e.name);
  CHECK(names.size() == 11);
  for (const char* n : {"red", "green", "blue", "yellow", "orange", "purple", "pink", "brown", "black", "white", "gray"}) {
    CHECK(names.count(n) == 1);
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = i + 1; j < p.size(); ++j) CHECK(delta_e(p[i].lab, p[j].lab) >= 20.0);
  }
  CHECK_THROWS_AS(palette_entry("crimson"), ValidationError);
}

TEST_CASE("generation is deterministic in the seed") {
  SceneSample a = generate_scene(42), b = generate_scene(42);
  CHECK(a.image.data == b.image.data);
  CHECK(a.gray.l == b.gray.l);
  REQUIRE(a.instances.size() == b.instances.size());
  for (std::size_t k = 0; k < a.instances.size(); ++k) {
    CHECK(a.instances[k].mask.bits == b.instances[k].mask.bits);
    CHECK(a.instances[k].color == b.instances[k].color);
  }
  CHECK(a.descriptions == b.descriptions);
  SceneSample c = generate_scene(43);
  CHECK(c.image.data != a.image.data);
}

TEST_CASE("scene invariants hold over many seeds") {
  GenerationConfig cfg;
  for (std::uint64_t s = 0; s < 200; ++s) {
    SceneSample sc = generate_scene(scene_seed(7, s), cfg);
    REQUIRE(sc.image.height == 64);
    REQUIRE(sc.instances.size() >= 1);
    REQUIRE(sc.instances.size() <= 4);
    CHECK(sc.gray.l == to_grayscale(sc.image).l);
    std::vector<int> cover(sc.image.pixels(), 0);
    std::size_t union_area = 0;
    std::set<std::string> colors;
    for (const auto& inst : sc.instances) {
      REQUIRE(inst.mask.area() >= static_cast<std::size_t>(0.05 * 64 * 64));
      colors.insert(inst.color);
      CHECK(palette_entry(inst.color).chromatic);
      for (std::size_t i = 0; i < cover.size(); ++i) {
        if (inst.mask.bits[i]) {
          REQUIRE(cover[i] == 0);
          cover[i] = 1;
          ++union_area;
        }
      }
    }
    CHECK(colors.size() == sc.instances.size());
    CHECK(union_area <= static_cast<std::size_t>(0.80 * 64 * 64));
    const std::size_t n = sc.instances.size();
    const auto& complete = sc.descriptions.at(Level::kComplete);
    const auto& partial = sc.descriptions.at(Level::kPartial);
    const auto& scarce = sc.descriptions.at(Level::kScarce);
    CHECK(complete.bindings.size() == n);
    std::set<int> covered;
    for (const auto& b : complete.bindings) covered.insert(b.instance);
    CHECK(covered.size() == n);
    if (n >= 2) {
      CHECK(!partial.bindings.empty());
      CHECK(partial.bindings.size() < n);
    }
    CHECK(scarce.bindings.empty());
    CHECK(scarce.text() == "a colorful image");
    for (const auto* d : {&complete, &partial}) {
      for (const auto& b : d->bindings) {
        REQUIRE(b.token < static_cast<int>(d->tokens.size()));
        CHECK(d->tokens[static_cast<std::size_t>(b.token)] == sc.instances[static_cast<std::size_t>(b.instance)].color);
      }
    }
  }
}

TEST_CASE("instance mean colour classifies as the assigned name") {
  int total = 0, correct = 0;
  for (std::uint64_t s = 0; s < 500; ++s) {
    SceneSample sc = generate_scene(scene_seed(11, s));
    LabImage lab = rgb_to_lab(sc.image);
    for (const auto& inst : sc.instances) {
      Lab m{0, 0, 0};
      double n = 0;
      for (std::size_t i = 0; i < inst.mask.bits.size(); ++i) {
        if (!inst.mask.bits[i]) continue;
        m[0] += lab.l[i];
        m[1] += lab.a[i];
        m[2] += lab.b[i];
        n += 1;
      }
      for (double& v : m) v /= n;
      ++total;
      correct += classify_color(m).name == inst.color ? 1 : 0;
    }
  }
  CHECK(static_cast<double>(correct) / total >= 0.99);
}

TEST_CASE("two-instance scene has two complete and one partial binding") {
  for (std::uint64_t s = 0; s < 400; ++s) {
    SceneSample sc = generate_scene(scene_seed(3, s));
    if (sc.instances.size() != 2) continue;
    CHECK(sc.descriptions.at(Level::kComplete).bindings.size() == 2);
    CHECK(sc.descriptions.at(Level::kPartial).bindings.size() == 1);
    return;
  }
  FAIL("no two-instance scene found");
}

TEST_CASE("descriptions follow the template") {
  SceneRng rng(1);
  std::vector<InstanceRecord> one{instance(ShapeKind::kCircle, "red")};
  Description d = render_description(one, Level::kComplete, rng);
  CHECK(d.text() == "a red circle");
  REQUIRE(d.bindings.size() == 1);
  CHECK(d.bindings[0] == Binding{1, 0});
  Description s = render_description(one, Level::kScarce, rng);
  CHECK(s.text() == "a colorful image");
  CHECK(s.bindings.empty());
  Description p = render_description(one, Level::kPartial, rng);
  CHECK(p.fell_back);
  CHECK(p.text() == "a red circle");

  std::vector<InstanceRecord> two{instance(ShapeKind::kCircle, "red"), instance(ShapeKind::kSquare, "blue")};
  Description c = render_description(two, Level::kComplete, rng);
  CHECK(c.text() == "a red circle, a blue square");
  REQUIRE(c.bindings.size() == 2);
  CHECK(c.tokens[static_cast<std::size_t>(c.bindings[1].token)] == "blue");
}

TEST_CASE("partial descriptions pick each instance evenly") {
  SceneRng rng(99);
  std::vector<InstanceRecord> two{instance(ShapeKind::kCircle, "red"), instance(ShapeKind::kSquare, "blue")};
  int first = 0;
  const int draws = 1000;
  for (int i = 0; i < draws; ++i) {
    Description d = render_description(two, Level::kPartial, rng);
    REQUIRE(d.bindings.size() == 1);
    const std::string t = d.text();
    REQUIRE((t == "a red circle" || t == "a blue square"));
    first += t == "a red circle" ? 1 : 0;
  }
  CHECK(std::abs(first / static_cast<double>(draws) - 0.5) <= 0.05);
}

TEST_CASE("infeasible layouts raise a generation error") {
  GenerationConfig cfg;
  cfg.size = 16;
  cfg.min_instances = 4;
  cfg.max_instances = 4;
  cfg.min_area_fraction = 0.3;
  cfg.max_area_fraction = 0.3;
  cfg.max_retries = 20;
  CHECK_THROWS_AS(generate_scene(1, cfg), GenerationError);
}

TEST_CASE("manifest round trip preserves metadata and masks") {
  fs::path dir = tmp_dir("manifest");
  std::vector<SceneSample> scenes;
  for (std::uint64_t s = 0; s < 10; ++s) {
    SceneSample sc = generate_scene(scene_seed(5, s));
    sc.id = "s" + std::to_string(s);
    scenes.push_back(std::move(sc));
  }
  write_manifest(scenes, dir);
  Dataset ds = read_manifest(dir);
  REQUIRE(ds.scenes.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& a = scenes[i];
    const auto& b = ds.scenes[i];
    CHECK(a.id == b.id);
    CHECK(a.seed == b.seed);
    CHECK(a.descriptions == b.descriptions);
    REQUIRE(a.instances.size() == b.instances.size());
    for (std::size_t k = 0; k < a.instances.size(); ++k) {
      CHECK(a.instances[k].mask.bits == b.instances[k].mask.bits);
      CHECK(a.instances[k].color == b.instances[k].color);
      CHECK(a.instances[k].shape == b.instances[k].shape);
      for (auto v : b.instances[k].mask.bits) CHECK((v == 0 || v == 1));
    }
  }
}

TEST_CASE("manifest errors are descriptive") {
  fs::path dir = tmp_dir("manifest_err");
  std::vector<SceneSample> scenes{generate_scene(1)};
  scenes[0].id = "lonely";
  write_manifest(scenes, dir);
  fs::remove(dir / "masks" / "lonely_0.png");
  try {
    read_manifest(dir);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("lonely") != std::string::npos);
  }

  fs::path dir2 = tmp_dir("manifest_ver");
  write_manifest(scenes, dir2);
  std::ifstream is(dir2 / "manifest.json");
  std::string text((std::istreambuf_iterator<char>(is)), {});
  is.close();
  const auto pos = text.find("\"schema_version\": 1");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 19, "\"schema_version\": 9");
  std::ofstream(dir2 / "manifest.json") << text;
  CHECK_THROWS_AS(read_manifest(dir2), IoError);
}
