#include <random>

#include <doctest.h>

#include "helpers.hpp"
#include "lcad/checkpoint.hpp"
#include "lcad/denoiser.hpp"
#include "lcad/error.hpp"
#include "lcad/optim.hpp"

using namespace lcad;
using nn::Var;

namespace {

// Nested-loop evaluation of the extended convolution, zero padding, stride 1.
std::vector<double> cec_oracle(const Var& f, const Var& y, const CecKernel& k) {
  const int n = f.dim(0), h = f.dim(2), w = f.dim(3), nf = k.n_fix(), ne = k.n_ext(), co = k.c_out(),
            nk = k.kernel(), r = nk / 2;
  std::vector<double> out(static_cast<std::size_t>(n) * co * h * w, 0.0);
  auto at = [](const Var& v, int b, int c, int yy, int xx) {
    return v.values()[((static_cast<std::size_t>(b) * v.dim(1) + c) * v.dim(2) + yy) * v.dim(3) + xx];
  };
  auto wt = [nk](const Var& v, int o, int c, int i, int j) {
    return v.values()[((static_cast<std::size_t>(o) * v.dim(1) + c) * nk + i) * nk + j];
  };
  for (int b = 0; b < n; ++b) {
    for (int o = 0; o < co; ++o) {
      for (int yy = 0; yy < h; ++yy) {
        for (int xx = 0; xx < w; ++xx) {
          double s = k.bias.values()[static_cast<std::size_t>(o)];
          for (int i = 0; i < nk; ++i) {
            for (int j = 0; j < nk; ++j) {
              const int sy = yy + i - r, sx = xx + j - r;
              if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
              for (int c = 0; c < nf; ++c) s += wt(k.w_fix, o, c, i, j) * at(f, b, c, sy, sx);
              for (int c = 0; c < ne; ++c) s += wt(k.w_ext, o, c, i, j) * at(y, b, c, sy, sx);
            }
          }
          out[((static_cast<std::size_t>(b) * co + o) * h + yy) * w + xx] = s;
        }
      }
    }
  }
  return out;
}

struct Fixture {
  nn::Rng rng{11};
  Vocabulary vocab = Vocabulary::standard();
  DenoiserConfig cfg;
  Denoiser den;
  TextEncoder text;
  CompressionModel pixel;

  Fixture() {
    den = Denoiser(cfg, rng);
    text = TextEncoder({16, cfg.text_width, 1}, vocab.size(), rng);
    CompressionConfig cc;
    cc.image_size = 64;
    pixel = CompressionModel(cc, rng);
  }

  TextEmbedding embed(const std::vector<std::string>& texts) const {
    std::vector<int> toks;
    for (const auto& t : texts) {
      auto v = tokenize(t, vocab, 16);
      toks.insert(toks.end(), v.begin(), v.end());
    }
    return text.encode(toks, static_cast<int>(texts.size()));
  }

  LuminancePyramid pyramid(int n, std::mt19937_64& r) const {
    return pixel.luminance(Var::from({n, 1, 64, 64}, test::random_vec(static_cast<std::size_t>(n) * 64 * 64, r, 0, 1)));
  }
};

void randomize_ext(Denoiser& den, std::mt19937_64& r) {
  for (int s = 0; s < den.attention_blocks(); ++s) {
    for (double& v : den.cec(s).w_ext.values()) v = std::normal_distribution<double>(0.0, 0.05)(r);
  }
}

}  // namespace

TEST_CASE("extended convolution matches the nested-loop oracle") {
  std::mt19937_64 r(1);
  nn::Rng rng(1);
  for (int nk : {1, 3}) {
    CecKernel k = CecKernel::make(5, 3, 4, nk, rng);
    for (double& v : k.w_ext.values()) v = std::normal_distribution<double>(0, 0.5)(r);
    for (double& v : k.bias.values()) v = std::normal_distribution<double>(0, 0.5)(r);
    Var f = test::random_var({2, 5, 8, 8}, r, 1.0, false);
    Var y = test::random_var({2, 3, 8, 8}, r, 1.0, false);
    Var out = cec_forward(f, y, k);
    auto ref = cec_oracle(f, y, k);
    REQUIRE(out.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) REQUIRE(std::abs(out.values()[i] - ref[i]) < 1e-6);
  }
}

TEST_CASE("zero extension is bit-exact vanilla convolution") {
  std::mt19937_64 r(2);
  nn::Rng rng(2);
  CecKernel k = CecKernel::make(6, 4, 5, 3, rng);
  for (double v : k.w_ext.values()) CHECK(v == 0.0);
  Var f = test::random_var({1, 6, 8, 8}, r, 1.0, false);
  Var y = test::random_var({1, 4, 8, 8}, r, 1.0, false);
  Var a = cec_forward(f, y, k);
  Var b = nn::conv2d(f, k.w_fix, k.bias, 1, 1, nn::Pad::kZero);
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a.values()[i] == b.values()[i]);
}

TEST_CASE("identity kernel reproduces the input") {
  std::mt19937_64 r(3);
  nn::Rng rng(3);
  CecKernel k = CecKernel::make(4, 2, 4, 1, rng);
  std::fill(k.w_fix.values().begin(), k.w_fix.values().end(), 0.0);
  for (int c = 0; c < 4; ++c) k.w_fix.values()[static_cast<std::size_t>(c) * 4 + c] = 1.0;
  std::fill(k.bias.values().begin(), k.bias.values().end(), 0.0);
  Var f = test::random_var({2, 4, 8, 8}, r, 1.0, false);
  Var y = test::random_var({2, 2, 8, 8}, r, 1.0, false);
  Var out = cec_forward(f, y, k);
  for (std::size_t i = 0; i < f.size(); ++i) REQUIRE(out.values()[i] == f.values()[i]);
}

TEST_CASE("extended convolution rejects mismatched shapes") {
  nn::Rng rng(4);
  CecKernel k = CecKernel::make(4, 2, 4, 3, rng);
  CHECK_THROWS_AS(cec_forward(Var::zeros({1, 3, 8, 8}), Var(), k), ShapeError);
  CHECK_THROWS_AS(cec_forward(Var::zeros({1, 4, 8, 8}), Var::zeros({1, 3, 8, 8}), k), ShapeError);
  CHECK_THROWS_AS(cec_forward(Var::zeros({1, 4, 8, 8}), Var::zeros({1, 2, 4, 4}), k), ShapeError);
}

TEST_CASE("luminance resize selects, resamples and projects") {
  std::mt19937_64 r(5);
  // Native size: projection only.
  Var lvl = test::random_var({1, 3, 16, 16}, r, 1.0, false);
  LuminancePyramid pyr{{Var(), Var(), lvl}};
  Var proj = test::random_var({2, 3, 1, 1}, r, 1.0, false);
  Var out = resize_luminance(pyr, 16, 16, proj);
  Var ref = nn::conv2d(lvl, proj, Var(), 1, 0, nn::Pad::kZero);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(out.values()[i] == ref.values()[i]);

  // Constant level stays constant.
  LuminancePyramid c{{Var::full({1, 3, 16, 16}, 0.25)}};
  Var one = Var::full({1, 3, 1, 1}, 1.0);
  Var c8 = resize_luminance(c, 8, 8, one), c57 = resize_luminance(c, 5, 7, one);
  for (double v : c8.values()) CHECK(v == doctest::Approx(0.75).epsilon(1e-12));
  for (double v : c57.values()) CHECK(v == doctest::Approx(0.75).epsilon(1e-12));

  // Horizontal ramp 16 -> 8: each output averages columns 2i and 2i+1.
  std::vector<double> ramp(16 * 16);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) ramp[static_cast<std::size_t>(y) * 16 + x] = x;
  }
  LuminancePyramid rp{{Var::from({1, 1, 16, 16}, ramp)}};
  Var id = Var::full({1, 1, 1, 1}, 1.0);
  Var down = resize_luminance(rp, 8, 8, id);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) CHECK(down.values()[static_cast<std::size_t>(y) * 8 + x] == doctest::Approx(2 * x + 0.5));
  }

  LuminancePyramid empty;
  CHECK_THROWS(resize_luminance(empty, 8, 8, id));
  CHECK_THROWS_AS(resize_luminance(rp, 32, 32, id), ShapeError);
}

TEST_CASE("pyramid level selection by scale") {
  LuminancePyramid p{{Var::zeros({1, 1, 64, 64}), Var::zeros({1, 1, 32, 32}), Var::zeros({1, 1, 16, 16})}};
  CHECK(select_pyramid_level(p, 64, 64) == 0);
  CHECK(select_pyramid_level(p, 32, 32) == 1);
  CHECK(select_pyramid_level(p, 16, 16) == 2);
  CHECK(select_pyramid_level(p, 8, 8) == 2);
  CHECK(select_pyramid_level(p, 4, 4) == 2);
}

TEST_CASE("denoiser output shape, maps and determinism") {
  Fixture fx;
  std::mt19937_64 r(6);
  Var z = test::random_var({2, 4, 16, 16}, r, 1.0, false);
  std::vector<int> t{10, 700};
  TextEmbedding e = fx.embed({"a red circle", "a colorful image"});
  LuminancePyramid pyr = fx.pyramid(2, r);
  nn::NoGradGuard guard;
  AttentionMapSet maps;
  Var a = fx.den.predict(z, t, e, &pyr, nullptr, &maps);
  CHECK(a.shape() == z.shape());
  REQUIRE(maps.blocks.size() == 3);
  CHECK(maps.heights == std::vector<int>{16, 8, 4});
  CHECK(maps.widths == std::vector<int>{16, 8, 4});
  for (const auto& blk : maps.blocks) {
    for (int n = 0; n < blk.n; ++n) {
      for (int p = 0; p < blk.p; ++p) {
        double s = 0.0;
        for (int k = 0; k < blk.t; ++k) s += blk.weights[(static_cast<std::size_t>(n) * blk.p + p) * blk.t + k];
        REQUIRE(std::abs(s - 1.0) < 1e-5);
      }
    }
  }
  Var b = fx.den.predict(z, t, e, &pyr);
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a.values()[i] == b.values()[i]);
}

TEST_CASE("luminance cannot leak before the extension is trained") {
  Fixture fx;
  std::mt19937_64 r(7);
  // Non-zero output layer so the comparison is not trivially zero.
  for (auto& p : fx.den.params()) {
    if (p.name.find("out") != std::string::npos) {
      for (double& v : p.var.values()) v = std::normal_distribution<double>(0, 0.1)(r);
    }
  }
  Var z = test::random_var({1, 4, 16, 16}, r, 1.0, false);
  std::vector<int> t{300};
  TextEmbedding e = fx.embed({"a blue square"});
  LuminancePyramid pyr = fx.pyramid(1, r);
  nn::NoGradGuard guard;
  Var a = fx.den.predict(z, t, e, &pyr);
  Var b = fx.den.predict(z, t, e, nullptr);
  double mag = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a.values()[i] == b.values()[i]);
    mag += std::abs(a.values()[i]);
  }
  CHECK(mag > 0.0);
  randomize_ext(fx.den, r);
  Var c = fx.den.predict(z, t, e, &pyr);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += std::abs(a.values()[i] - c.values()[i]);
  CHECK(diff > 0.0);
}

TEST_CASE("overriding with the returned maps reproduces the prediction") {
  Fixture fx;
  std::mt19937_64 r(8);
  for (auto& p : fx.den.params()) {
    if (p.name.find("out") != std::string::npos) {
      for (double& v : p.var.values()) v = std::normal_distribution<double>(0, 0.1)(r);
    }
  }
  randomize_ext(fx.den, r);
  Var z = test::random_var({2, 4, 16, 16}, r, 1.0, false);
  std::vector<int> t{50, 500};
  TextEmbedding e = fx.embed({"a red circle, a blue square", "a green triangle"});
  LuminancePyramid pyr = fx.pyramid(2, r);
  nn::NoGradGuard guard;
  AttentionMapSet maps;
  Var a = fx.den.predict(z, t, e, &pyr, nullptr, &maps);
  for (const std::vector<int>& cols : {std::vector<int>{1, 5}, std::vector<int>{0, 1, 2, 3, 4, 5, 6}}) {
    AttentionOverrideSet ov;
    for (const auto& blk : maps.blocks) {
      std::vector<nn::AttentionOverride> per(static_cast<std::size_t>(blk.n));
      for (int n = 0; n < blk.n; ++n) {
        per[static_cast<std::size_t>(n)].columns = cols;
        for (int p = 0; p < blk.p; ++p) {
          for (int c : cols) {
            per[static_cast<std::size_t>(n)].values.push_back(
                blk.weights[(static_cast<std::size_t>(n) * blk.p + p) * blk.t + c]);
          }
        }
      }
      ov.blocks.push_back(std::move(per));
    }
    AttentionMapSet echoed;
    Var b = fx.den.predict(z, t, e, &pyr, &ov, &echoed);
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(std::abs(a.values()[i] - b.values()[i]) <= 1e-6);
    for (std::size_t l = 0; l < maps.blocks.size(); ++l) {
      for (std::size_t i = 0; i < maps.blocks[l].weights.size(); ++i) {
        REQUIRE(std::abs(maps.blocks[l].weights[i] - echoed.blocks[l].weights[i]) <= 1e-9);
      }
    }
  }
}

TEST_CASE("malformed override sets are rejected") {
  Fixture fx;
  std::mt19937_64 r(9);
  Var z = test::random_var({1, 4, 16, 16}, r, 1.0, false);
  std::vector<int> t{5};
  TextEmbedding e = fx.embed({"a red circle"});
  nn::NoGradGuard guard;
  AttentionOverrideSet wrong_blocks;
  wrong_blocks.blocks.resize(2);
  CHECK_THROWS_AS(fx.den.predict(z, t, e, nullptr, &wrong_blocks), ShapeError);
  AttentionOverrideSet wrong_values;
  wrong_values.blocks.resize(3);
  wrong_values.blocks[0].resize(1);
  wrong_values.blocks[0][0].columns = {1};
  wrong_values.blocks[0][0].values = {0.5, 0.5};
  CHECK_THROWS_AS(fx.den.predict(z, t, e, nullptr, &wrong_values), ShapeError);
}

TEST_CASE("a training step leaves frozen base kernels untouched") {
  Fixture fx;
  std::mt19937_64 r(10);
  fx.den.freeze_base(true);
  nn::ParamList ps = fx.den.params();
  std::vector<nn::NamedParam> trainable;
  int frozen = 0;
  for (const auto& p : ps) {
    if (p.frozen) {
      ++frozen;
      CHECK(p.name.find("w_fix") != std::string::npos);
    } else {
      trainable.push_back(p);
    }
  }
  CHECK(frozen == 3);
  const auto before = nn::param_checksum(ps, true);
  const auto all_before = nn::param_checksum(ps);
  nn::Adam opt(trainable, {});
  Var z = test::random_var({2, 4, 16, 16}, r, 1.0, false);
  std::vector<int> t{100, 900};
  TextEmbedding e = fx.embed({"a red circle", "a colorful image"});
  LuminancePyramid pyr = fx.pyramid(2, r);
  Var target = test::random_var({2, 4, 16, 16}, r, 1.0, false);
  Var loss = nn::mean(nn::square(nn::sub(fx.den.predict(z, t, e, &pyr), target)));
  opt.zero_grad();
  nn::backward(loss);
  opt.step();
  CHECK(nn::param_checksum(fx.den.params(), true) == before);
  CHECK(nn::param_checksum(fx.den.params()) != all_before);
}

TEST_CASE("timestep embedding is sinusoidal") {
  auto e = timestep_embedding(0, 8);
  for (int i = 0; i < 4; ++i) {
    CHECK(e[static_cast<std::size_t>(i)] == 0.0);
    CHECK(e[static_cast<std::size_t>(4 + i)] == 1.0);
  }
  auto f = timestep_embedding(7, 8);
  CHECK(f[0] == doctest::Approx(std::sin(7.0)));
  CHECK(f[5] == doctest::Approx(std::cos(7.0 * std::exp(-std::log(10000.0) / 4))));
}
