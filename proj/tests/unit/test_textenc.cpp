#include <random>

#include <doctest.h>

#include "helpers.hpp"
#include "lcad/error.hpp"
#include "lcad/synthdata.hpp"
#include "lcad/textenc.hpp"

using namespace lcad;
using nn::Var;

TEST_CASE("vocabulary is dense with fixed special tokens") {
  Vocabulary v = Vocabulary::standard();
  CHECK(v.index("<pad>") == kPadToken);
  CHECK(v.word(kPadToken) == v.words()[0]);
  CHECK(v.word(kUnkToken) == v.words()[1]);
  CHECK(v.size() <= 64);
  for (const auto& e : palette()) CHECK(v.index(e.name) > kUnkToken);
  for (const char* w : {"a", "circle", "square", "triangle", "colorful", "image", ","}) CHECK(v.index(w) > kUnkToken);
  for (int i = 0; i < v.size(); ++i) CHECK(v.index(v.word(i)) == i);
}

TEST_CASE("tokenize pads, maps unknowns and always returns n_tok") {
  Vocabulary v = Vocabulary::standard();
  auto t = tokenize("a red circle", v, 16);
  REQUIRE(t.size() == 16);
  CHECK(t[0] == v.index("a"));
  CHECK(t[1] == v.index("red"));
  CHECK(t[2] == v.index("circle"));
  for (std::size_t i = 3; i < 16; ++i) CHECK(t[i] == kPadToken);
  auto u = tokenize("a crimson circle", v, 16);
  CHECK(u[1] == kUnkToken);
  auto c = tokenize("a red circle, a blue square", v, 16);
  CHECK(c[3] == v.index(","));
  CHECK(c[5] == v.index("blue"));
  std::string longer;
  for (int i = 0; i < 40; ++i) longer += "a red circle ";
  CHECK(tokenize(longer, v, 16).size() == 16);
  CHECK(tokenize("x", v, 5).size() == 5);
  CHECK_THROWS_AS(tokenize("", v, 16), ValidationError);
  CHECK_THROWS_AS(tokenize("   ", v, 16), ValidationError);
}

TEST_CASE("encoder output is deterministic with zero padded rows") {
  nn::Rng rng(3);
  Vocabulary v = Vocabulary::standard();
  TextEncoder enc({16, 64, 1}, v.size(), rng);
  auto toks = tokenize("a red circle", v, 16);
  TextEmbedding a = enc.encode(toks, 1), b = enc.encode(toks, 1);
  CHECK(std::equal(a.sequence.values().begin(), a.sequence.values().end(), b.sequence.values().begin()));
  for (int t = 0; t < 16; ++t) {
    CHECK(a.valid[static_cast<std::size_t>(t)] == (t < 3 ? 1 : 0));
    if (t < 3) continue;
    for (int d = 0; d < 64; ++d) CHECK(a.sequence.values()[static_cast<std::size_t>(t) * 64 + d] == 0.0);
  }
  std::vector<int> pads(16, kPadToken);
  TextEmbedding p = enc.encode(pads, 1);
  for (double x : p.sequence.values()) CHECK(x == 0.0);
}

TEST_CASE("encoder rows are bounded at initialization") {
  nn::Rng rng(4);
  Vocabulary v = Vocabulary::standard();
  TextEncoder enc({16, 64, 1}, v.size(), rng);
  auto toks = tokenize("a red circle, a blue square, a green triangle", v, 16);
  TextEmbedding e = enc.encode(toks, 1);
  for (int t = 0; t < 16; ++t) {
    double n = 0.0;
    for (int d = 0; d < 64; ++d) n += std::pow(e.sequence.values()[static_cast<std::size_t>(t) * 64 + d], 2);
    CHECK(std::sqrt(n) <= 10.0);
  }
}

TEST_CASE("encoder is position sensitive") {
  nn::Rng rng(5);
  Vocabulary v = Vocabulary::standard();
  TextEncoder enc({16, 64, 1}, v.size(), rng);
  auto a = tokenize("a red circle", v, 16);
  auto b = tokenize("a circle red", v, 16);
  TextEmbedding ea = enc.encode(a, 1), eb = enc.encode(b, 1);
  double diff = 0.0;
  for (std::size_t i = 0; i < ea.sequence.size(); ++i) diff += std::abs(ea.sequence.values()[i] - eb.sequence.values()[i]);
  CHECK(diff > 1e-6);
}

TEST_CASE("encoder gradient matches finite differences") {
  nn::Rng rng(6);
  Vocabulary v = Vocabulary::standard();
  TextEncoder enc({8, 16, 1}, v.size(), rng);
  auto toks = tokenize("a red circle, a blue square", v, 8);
  Var table = enc.token_table();
  // Probe only rows of tokens that are used so differences are non-trivial.
  const double err = test::gradient_error([&] { return test::probe(enc.encode(toks, 1).sequence); }, {table}, 1e-4, 200);
  CHECK(err < 1e-4);
}

TEST_CASE("encoder rejects out of range tokens") {
  nn::Rng rng(7);
  Vocabulary v = Vocabulary::standard();
  TextEncoder enc({4, 16, 1}, v.size(), rng);
  std::vector<int> bad{0, v.size(), 0, 0};
  CHECK_THROWS(enc.encode(bad, 1));
  std::vector<int> short_seq{1, 2};
  CHECK_THROWS(enc.encode(short_seq, 1));
}
