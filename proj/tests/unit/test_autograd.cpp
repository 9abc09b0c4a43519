#include <random>

#include <doctest.h>

#include "helpers.hpp"
#include "lcad/error.hpp"
#include "lcad/layers.hpp"

using namespace lcad;
using nn::Var;
using test::gradient_error;
using test::probe;
using test::random_var;

TEST_CASE("elementwise ops have exact gradients") {
  std::mt19937_64 rng(1);
  Var a = random_var({3, 4}, rng);
  Var b = random_var({3, 4}, rng);
  Var pos = Var::from({3, 4}, test::random_vec(12, rng, 0.5, 2.0), true);
  CHECK(gradient_error([&] { return probe(nn::add(a, b)); }, {a, b}) < 1e-6);
  CHECK(gradient_error([&] { return probe(nn::sub(a, b)); }, {a, b}) < 1e-6);
  CHECK(gradient_error([&] { return probe(nn::mul(a, b)); }, {a, b}) < 1e-6);
  CHECK(gradient_error([&] { return probe(nn::div(a, pos)); }, {a, pos}) < 1e-6);
  CHECK(gradient_error([&] { return probe(nn::silu(a)); }, {a}) < 1e-6);
  CHECK(gradient_error([&] { return probe(nn::sigmoid(a)); }, {a}) < 1e-6);
  CHECK(gradient_error([&] { return probe(nn::leaky_relu(a, 0.2)); }, {a}) < 1e-6);
  CHECK(gradient_error([&] { return probe(nn::relu(a)); }, {a}) < 1e-6);
  CHECK(gradient_error([&] { return probe(nn::abs(a)); }, {a}) < 1e-6);
  CHECK(gradient_error([&] { return probe(nn::square(a)); }, {a}) < 1e-6);
  CHECK(gradient_error([&] { return probe(nn::sqrt_eps(pos, 1e-3)); }, {pos}) < 1e-6);
  CHECK(gradient_error([&] { return nn::mean(nn::scale(nn::add_scalar(a, 2.0), 3.0)); }, {a}) < 1e-6);
}

TEST_CASE("convolution gradients for every padding mode and stride") {
  std::mt19937_64 rng(2);
  for (auto mode : {nn::Pad::kZero, nn::Pad::kReflect}) {
    for (int stride : {1, 2}) {
      for (int k : {1, 3}) {
        Var x = random_var({2, 3, 8, 8}, rng);
        Var w = random_var({4, 3, k, k}, rng, 0.5);
        Var b = random_var({4}, rng);
        const int pad = k / 2;
        CHECK(gradient_error([&] { return probe(nn::conv2d(x, w, b, stride, pad, mode)); }, {x, w, b}) < 1e-5);
      }
    }
  }
}

TEST_CASE("shape ops and normalization gradients") {
  std::mt19937_64 rng(3);
  Var x = random_var({2, 4, 6, 6}, rng);
  Var y = random_var({2, 3, 6, 6}, rng);
  Var g = random_var({4}, rng);
  Var be = random_var({4}, rng);
  Var off = random_var({2, 4}, rng);
  CHECK(gradient_error([&] { return probe(nn::group_norm(x, g, be, 2)); }, {x, g, be}) < 1e-5);
  CHECK(gradient_error([&] { return probe(nn::avg_pool2(x)); }, {x}) < 1e-5);
  CHECK(gradient_error([&] { return probe(nn::upsample_nearest2(x)); }, {x}) < 1e-6);
  CHECK(gradient_error([&] { return probe(nn::resize_bilinear(x, 4, 5)); }, {x}) < 1e-6);
  CHECK(gradient_error([&] { return probe(nn::resize_bilinear(x, 9, 7)); }, {x}) < 1e-6);
  CHECK(gradient_error([&] { return probe(nn::concat_channels(x, y)); }, {x, y}) < 1e-6);
  CHECK(gradient_error([&] { return probe(nn::tokens_to_nchw(nn::nchw_to_tokens(x), 6, 6), 3); }, {x}) < 1e-6);
  CHECK(gradient_error([&] { return probe(nn::add_channel_offset(x, off)); }, {x, off}) < 1e-6);
  CHECK(gradient_error([&] { return probe(nn::reshape(x, {2, 144})); }, {x}) < 1e-6);
}

TEST_CASE("linear, embedding and attention gradients") {
  std::mt19937_64 rng(4);
  Var x = random_var({2, 5, 6}, rng);
  Var w = random_var({3, 6}, rng);
  Var b = random_var({3}, rng);
  CHECK(gradient_error([&] { return probe(nn::linear(x, w, b)); }, {x, w, b}) < 1e-6);

  Var table = random_var({7, 4}, rng);
  Var pos = random_var({3, 4}, rng);
  const std::vector<int> ids{1, 6, 0, 2, 2, 5};
  CHECK(gradient_error([&] { return probe(nn::add_positional(nn::embedding(table, ids, 2, 3), pos)); }, {table, pos}) <
        1e-6);

  Var q = random_var({2, 6, 8}, rng);
  Var k = random_var({2, 5, 8}, rng);
  Var v = random_var({2, 5, 8}, rng);
  const std::vector<std::uint8_t> valid{1, 1, 1, 0, 0, 1, 1, 1, 1, 1};
  for (int heads : {1, 2}) {
    CHECK(gradient_error([&] { return probe(nn::attention(q, k, v, heads, valid)); }, {q, k, v}) < 1e-5);
  }
  Var t = random_var({2, 5, 8}, rng);
  const auto target = test::random_vec(80, rng);
  CHECK(gradient_error([&] { return nn::mse_const(t, target); }, {t}) < 1e-6);
}

TEST_CASE("attention rows are normalized and padding keys get zero weight") {
  std::mt19937_64 rng(5);
  Var q = random_var({1, 4, 4}, rng, 1.0, false);
  Var k = random_var({1, 3, 4}, rng, 1.0, false);
  Var v = random_var({1, 3, 4}, rng, 1.0, false);
  const std::vector<std::uint8_t> valid{1, 0, 1};
  nn::AttentionTrace tr;
  nn::attention(q, k, v, 1, valid, {}, &tr);
  for (int p = 0; p < 4; ++p) {
    double s = 0.0;
    for (int t = 0; t < 3; ++t) s += tr.weights[static_cast<std::size_t>(p) * 3 + t];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(tr.weights[static_cast<std::size_t>(p) * 3 + 1] == 0.0);
  }
}

TEST_CASE("attention overrides replace columns and renormalize the rest") {
  std::mt19937_64 rng(6);
  Var q = random_var({1, 2, 4}, rng, 1.0, false);
  Var k = random_var({1, 4, 4}, rng, 1.0, false);
  Var v = random_var({1, 4, 4}, rng, 1.0, false);
  const std::vector<std::uint8_t> valid{1, 1, 1, 1};
  nn::AttentionTrace base, ov;
  nn::attention(q, k, v, 1, valid, {}, &base);
  nn::AttentionOverride o{{2}, {0.6, 0.1}};
  const nn::AttentionOverride* slots[] = {&o};
  nn::attention(q, k, v, 1, valid, slots, &ov);
  for (int p = 0; p < 2; ++p) {
    const double* bw = base.weights.data() + p * 4;
    const double* w = ov.weights.data() + p * 4;
    CHECK(w[2] == doctest::Approx(p == 0 ? 0.6 : 0.1));
    CHECK(w[0] + w[1] + w[2] + w[3] == doctest::Approx(1.0));
    CHECK(w[0] / w[1] == doctest::Approx(bw[0] / bw[1]));
    CHECK(w[3] / w[1] == doctest::Approx(bw[3] / bw[1]));
    CHECK(ov.raw[static_cast<std::size_t>(p) * 4] == base.raw[static_cast<std::size_t>(p) * 4]);
  }
  // Overrides whose sum reaches one are normalized and take the whole row.
  nn::AttentionOverride big{{0, 1}, {0.9, 0.6, 0.3, 0.9}};
  const nn::AttentionOverride* slots2[] = {&big};
  nn::attention(q, k, v, 1, valid, slots2, &ov);
  CHECK(ov.weights[0] == doctest::Approx(0.6));
  CHECK(ov.weights[1] == doctest::Approx(0.4));
  CHECK(ov.weights[2] == 0.0);
  CHECK(ov.weights[4] == doctest::Approx(0.25));
  CHECK(ov.weights[5] == doctest::Approx(0.75));
}

TEST_CASE("attention overrides refuse to record gradients") {
  std::mt19937_64 rng(7);
  Var q = random_var({1, 2, 4}, rng);
  Var k = random_var({1, 3, 4}, rng);
  Var v = random_var({1, 3, 4}, rng);
  const std::vector<std::uint8_t> valid{1, 1, 1};
  nn::AttentionOverride o{{0}, {0.5, 0.5}};
  const nn::AttentionOverride* slots[] = {&o};
  CHECK_THROWS_AS(nn::attention(q, k, v, 1, valid, slots), Error);
  nn::NoGradGuard guard;
  CHECK_NOTHROW(nn::attention(q, k, v, 1, valid, slots));
}

TEST_CASE("shape errors are reported") {
  Var a = Var::zeros({2, 3});
  Var b = Var::zeros({3, 2});
  CHECK_THROWS_AS(nn::add(a, b), ShapeError);
  Var x = Var::zeros({1, 3, 4, 4});
  Var w = Var::zeros({2, 4, 3, 3});
  CHECK_THROWS_AS(nn::conv2d(x, w, Var(), 1, 1, nn::Pad::kZero), ShapeError);
}

TEST_CASE("no-grad guard stops graph recording") {
  std::mt19937_64 rng(8);
  Var a = random_var({4}, rng);
  Var y;
  {
    nn::NoGradGuard guard;
    CHECK_FALSE(nn::grad_enabled());
    y = nn::square(a);
  }
  CHECK(nn::grad_enabled());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("bilinear resize preserves constants and averages on exact 2x downscale") {
  std::vector<double> ramp(16 * 16);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) ramp[static_cast<std::size_t>(y) * 16 + x] = 0.25 * x - 0.5 * y + 3.0;
  }
  Var r = nn::resize_bilinear(Var::from({1, 1, 16, 16}, ramp), 8, 8);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      CHECK(r.values()[static_cast<std::size_t>(y) * 8 + x] ==
            doctest::Approx(0.25 * (2 * x + 0.5) - 0.5 * (2 * y + 0.5) + 3.0).epsilon(1e-14));
    }
  }
  Var c = nn::resize_bilinear(Var::full({1, 2, 5, 7}, 1.75), 11, 3);
  for (double v : c.values()) CHECK(v == doctest::Approx(1.75).epsilon(1e-15));
}
