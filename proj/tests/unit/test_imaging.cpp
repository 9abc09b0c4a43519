#include <filesystem>
#include <fstream>
#include <random>

#include <doctest.h>

#include "helpers.hpp"
#include "lcad/error.hpp"
#include "lcad/imaging.hpp"

using namespace lcad;
namespace fs = std::filesystem;

namespace {

RgbImage random_image(int h, int w, std::mt19937_64& rng) {
  return RgbImage::create(h, w, test::random_vec(static_cast<std::size_t>(h) * w * 3, rng, 0.0, 1.0));
}

fs::path tmp_dir(const std::string& name) {
  fs::path p = fs::path(LCAD_TEST_TMP) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("white and black map to the Lab extremes") {
  Lab w = srgb_to_lab({1, 1, 1});
  CHECK(w[0] == doctest::Approx(100.0).epsilon(1e-9));
  CHECK(std::abs(w[1]) < 1e-3);
  CHECK(std::abs(w[2]) < 1e-3);
  Lab k = srgb_to_lab({0, 0, 0});
  CHECK(std::abs(k[0]) < 1e-9);
  CHECK(std::abs(k[1]) < 1e-9);
  CHECK(std::abs(k[2]) < 1e-9);
}

TEST_CASE("mid-gray and red match the reference conversion") {
  Lab g = srgb_to_lab({0.5, 0.5, 0.5});
  CHECK(g[0] == doctest::Approx(53.38896474111432).epsilon(1e-10));
  CHECK(std::abs(g[1]) < 1e-9);
  CHECK(std::abs(g[2]) < 1e-9);
  Lab r = srgb_to_lab({0.85, 0.12, 0.10});
  CHECK(r[0] == doctest::Approx(46.64471789101894).epsilon(1e-10));
  CHECK(r[1] == doctest::Approx(67.37929095336848).epsilon(1e-10));
  CHECK(r[2] == doctest::Approx(51.542083245963).epsilon(1e-10));
}

TEST_CASE("Lab to RGB inverts in gamut and clips out of gamut") {
  Rgb w = lab_to_srgb({100, 0, 0});
  for (double c : w) CHECK(c == doctest::Approx(1.0).epsilon(1e-3));
  Rgb o = lab_to_srgb({50, 127, 0});
  for (double c : o) {
    CHECK(c >= 0.0);
    CHECK(c <= 1.0);
  }
  std::mt19937_64 rng(3);
  RgbImage img = random_image(10, 10, rng);
  RgbImage back = lab_to_rgb(rgb_to_lab(img));
  double worst = 0.0;
  for (std::size_t i = 0; i < img.data.size(); ++i) worst = std::max(worst, std::abs(img.data[i] - back.data[i]));
  CHECK(worst < 1e-3);
}

TEST_CASE("round trip holds over many random images") {
  std::mt19937_64 rng(4);
  for (int k = 0; k < 20; ++k) {
    RgbImage img = random_image(8, 9, rng);
    RgbImage back = lab_to_rgb(rgb_to_lab(img));
    for (std::size_t i = 0; i < img.data.size(); ++i) REQUIRE(std::abs(img.data[i] - back.data[i]) < 1e-3);
  }
}

TEST_CASE("conversion is pixel-wise") {
  std::mt19937_64 rng(5);
  RgbImage img = random_image(8, 8, rng);
  RgbImage perm = img;
  std::vector<std::size_t> order(img.pixels());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t p = 0; p < order.size(); ++p) {
    for (int c = 0; c < 3; ++c) perm.data[p * 3 + c] = img.data[order[p] * 3 + c];
  }
  LabImage a = rgb_to_lab(img), b = rgb_to_lab(perm);
  for (std::size_t p = 0; p < order.size(); ++p) {
    CHECK(b.l[p] == a.l[order[p]]);
    CHECK(b.a[p] == a.a[order[p]]);
    CHECK(b.b[p] == a.b[order[p]]);
  }
}

TEST_CASE("grayscale is exactly the L channel") {
  std::mt19937_64 rng(6);
  RgbImage img = random_image(12, 8, rng);
  CHECK(to_grayscale(img).l == rgb_to_lab(img).l);
  GrayImage w = to_grayscale(RgbImage::filled(8, 8, 1, 1, 1));
  for (double v : w.l) CHECK(v == doctest::Approx(100.0).epsilon(1e-9));
  GrayImage k = to_grayscale(RgbImage::filled(8, 8, 0, 0, 0));
  for (double v : k.l) CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("grayscale ignores chroma") {
  // Same L, different a/b: build the second image from shifted chroma.
  std::mt19937_64 rng(7);
  LabImage lab;
  lab.height = lab.width = 8;
  lab.l.assign(64, 0.0);
  lab.a.assign(64, 0.0);
  lab.b.assign(64, 0.0);
  for (auto& v : lab.l) v = std::uniform_real_distribution<double>(40, 60)(rng);
  LabImage shifted = lab;
  for (auto& v : shifted.a) v = 15.0;
  for (auto& v : shifted.b) v = -10.0;
  RgbImage x = lab_to_rgb(lab), y = lab_to_rgb(shifted);
  GrayImage gx = to_grayscale(x), gy = to_grayscale(y);
  for (std::size_t i = 0; i < 64; ++i) CHECK(gx.l[i] == doctest::Approx(gy.l[i]).epsilon(1e-6));
}

TEST_CASE("image validation rejects bad inputs") {
  CHECK_THROWS_AS(RgbImage::create(8, 8, std::vector<double>(8 * 8 * 3, 1.5)), ValidationError);
  CHECK_THROWS_AS(RgbImage::create(8, 8, std::vector<double>(8 * 8 * 3, std::nan(""))), ValidationError);
  CHECK_THROWS_AS(RgbImage::create(4, 8, std::vector<double>(4 * 8 * 3, 0.5)), ValidationError);
  CHECK_THROWS_AS(RgbImage::create(8, 8, std::vector<double>(10, 0.5)), ValidationError);
}

TEST_CASE("PNG round trip is within one quantization step") {
  std::mt19937_64 rng(8);
  fs::path dir = tmp_dir("png");
  RgbImage img = random_image(64, 64, rng);
  save_image(img, dir / "x.png");
  RgbImage back = load_image(dir / "x.png");
  REQUIRE(back.height == 64);
  REQUIRE(back.width == 64);
  double worst = 0.0;
  for (std::size_t i = 0; i < img.data.size(); ++i) worst = std::max(worst, std::abs(img.data[i] - back.data[i]));
  CHECK(worst <= 1.0 / 255.0 + 1e-12);
  std::ifstream f(dir / "x.png", std::ios::binary);
  char sig[8] = {};
  f.read(sig, 8);
  CHECK(std::string(sig + 1, 3) == "PNG");
}

TEST_CASE("PNG errors name the path") {
  fs::path dir = tmp_dir("png_err");
  try {
    load_image(dir / "missing.png");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("missing.png") != std::string::npos);
  }
  std::ofstream(dir / "junk.png") << "not a png";
  CHECK_THROWS_AS(load_image(dir / "junk.png"), IoError);
}

TEST_CASE("mask round trip is lossless") {
  fs::path dir = tmp_dir("mask");
  Mask m;
  m.height = 9;
  m.width = 11;
  m.bits.assign(99, 0);
  for (int i = 0; i < 99; i += 4) m.bits[static_cast<std::size_t>(i)] = 1;
  save_mask(m, dir / "m.png");
  Mask back = load_mask(dir / "m.png");
  CHECK(back.height == 9);
  CHECK(back.width == 11);
  CHECK(back.bits == m.bits);
  CHECK(back.area() == m.area());
}
