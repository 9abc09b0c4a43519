#include <random>

#include <doctest.h>

#include "helpers.hpp"
#include "lcad/diffusion.hpp"
#include "lcad/error.hpp"

using namespace lcad;
using nn::Var;

namespace {

DenoiserConfig tiny_config() {
  DenoiserConfig c;
  c.channels[0] = 8;
  c.channels[1] = 16;
  c.channels[2] = 16;
  c.n_ext[0] = c.n_ext[1] = c.n_ext[2] = 4;
  c.lum_channels = 8;
  c.time_dim = 16;
  c.text_width = 16;
  c.groups = 4;
  return c;
}

std::vector<double> oracle_eps(std::span<const double> z_t, std::span<const double> z0, int t,
                               const NoiseSchedule& s) {
  const double a = s.at(t);
  std::vector<double> e(z_t.size());
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = (z_t[i] - std::sqrt(a) * z0[i]) / std::sqrt(1.0 - a);
  return e;
}

std::vector<double> run_oracle(std::vector<double> z, std::span<const double> z0, const std::vector<int>& ts,
                               const NoiseSchedule& s) {
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t_prev = i + 1 < ts.size() ? ts[i + 1] : -1;
    z = ddim_step(z, oracle_eps(z, z0, ts[i], s), ts[i], t_prev, s);
  }
  return z;
}

}  // namespace

TEST_CASE("cosine schedule shape") {
  NoiseSchedule s = NoiseSchedule::cosine();
  REQUIRE(s.T == 1000);
  CHECK(s.alpha_bar[0] >= 0.99);
  CHECK(s.alpha_bar[0] < 1.0);
  for (int t = 1; t < s.T; ++t) REQUIRE(s.alpha_bar[static_cast<std::size_t>(t)] < s.alpha_bar[static_cast<std::size_t>(t - 1)]);
  CHECK(s.alpha_bar.back() > 0.0);
  CHECK(s.at(-1) == 1.0);
  CHECK_THROWS_AS(s.at(1000), ValidationError);
  auto ts = s.sampling_timesteps(50);
  REQUIRE(ts.size() == 50);
  CHECK(ts.front() == 980);
  CHECK(ts.back() == 0);
  for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i - 1] - ts[i] == 20);
}

TEST_CASE("forward diffusion identities") {
  NoiseSchedule s = NoiseSchedule::cosine();
  std::mt19937_64 rng(1);
  auto z0 = test::random_vec(32, rng);
  auto eps = test::random_vec(32, rng);
  std::vector<double> zero(32, 0.0);
  for (int t : {0, 10, 500, 999}) {
    auto z = forward_diffuse(z0, t, zero, s);
    for (std::size_t i = 0; i < 32; ++i) CHECK(z[i] == std::sqrt(s.at(t)) * z0[i]);
    // Exact inversion knowing eps.
    auto zt = forward_diffuse(z0, t, eps, s);
    for (std::size_t i = 0; i < 32; ++i) {
      const double back = (zt[i] - std::sqrt(1.0 - s.at(t)) * eps[i]) / std::sqrt(s.at(t));
      CHECK(std::abs(back - z0[i]) < 1e-12 / std::sqrt(s.at(t)) + 1e-12);
    }
  }
  NoiseSchedule unit = s;
  unit.alpha_bar[3] = 1.0;
  auto same = forward_diffuse(z0, 3, eps, unit);
  for (std::size_t i = 0; i < 32; ++i) CHECK(same[i] == z0[i]);
  CHECK_THROWS_AS(forward_diffuse(z0, 1000, eps, s), ValidationError);
  CHECK_THROWS_AS(forward_diffuse(z0, -1, eps, s), ValidationError);
}

TEST_CASE("forward diffusion energy matches its expectation") {
  NoiseSchedule s = NoiseSchedule::cosine();
  std::mt19937_64 rng(2);
  const std::size_t dim = 16;
  auto z0 = test::random_vec(dim, rng);
  double z0n = 0.0;
  for (double v : z0) z0n += v * v;
  std::normal_distribution<double> g;
  for (int t : {100, 600}) {
    const int draws = 10000;
    double sum = 0.0, sq = 0.0;
    std::vector<double> eps(dim);
    for (int k = 0; k < draws; ++k) {
      for (double& e : eps) e = g(rng);
      auto z = forward_diffuse(z0, t, eps, s);
      double n = 0.0;
      for (double v : z) n += v * v;
      sum += n;
      sq += n * n;
    }
    const double mean = sum / draws;
    const double se = std::sqrt((sq / draws - mean * mean) / draws);
    const double expect = s.at(t) * z0n + (1.0 - s.at(t)) * dim;
    CHECK(std::abs(mean - expect) <= 3.0 * se);
  }
}

TEST_CASE("DDIM step identities") {
  NoiseSchedule s = NoiseSchedule::cosine();
  std::mt19937_64 rng(3);
  auto z0 = test::random_vec(24, rng);
  auto eps = test::random_vec(24, rng);
  auto zt = forward_diffuse(z0, 400, eps, s);
  auto back = ddim_step(zt, eps, 400, -1, s);
  for (std::size_t i = 0; i < 24; ++i) CHECK(std::abs(back[i] - z0[i]) < 1e-12);
  auto a = ddim_step(zt, eps, 400, 200, s), b = ddim_step(zt, eps, 400, 200, s);
  CHECK(a == b);
  CHECK_THROWS_AS(ddim_step(zt, eps, 400, 400, s), ValidationError);
  CHECK_THROWS_AS(ddim_step(zt, eps, 400, 500, s), ValidationError);
}

TEST_CASE("oracle trajectory recovers the clean latent") {
  NoiseSchedule s = NoiseSchedule::cosine();
  std::mt19937_64 rng(4);
  auto z0 = test::random_vec(64, rng);
  auto eps = test::random_vec(64, rng);
  auto ts = s.sampling_timesteps(50);
  auto z = run_oracle(forward_diffuse(z0, ts.front(), eps, s), z0, ts, s);
  for (std::size_t i = 0; i < 64; ++i) CHECK(std::abs(z[i] - z0[i]) < 1e-5);
}

TEST_CASE("inserting oracle steps does not change the endpoint") {
  NoiseSchedule s = NoiseSchedule::cosine();
  std::mt19937_64 rng(5);
  auto z0 = test::random_vec(32, rng);
  auto eps = test::random_vec(32, rng);
  auto start = forward_diffuse(z0, 900, eps, s);
  auto coarse = ddim_step(start, oracle_eps(start, z0, 900, s), 900, 300, s);
  auto mid = ddim_step(start, oracle_eps(start, z0, 900, s), 900, 600, s);
  auto fine = ddim_step(mid, oracle_eps(mid, z0, 600, s), 600, 300, s);
  for (std::size_t i = 0; i < 32; ++i) CHECK(std::abs(coarse[i] - fine[i]) < 1e-4);
}

TEST_CASE("guidance combination identities") {
  std::mt19937_64 rng(6);
  auto c = test::random_vec(20, rng), u = test::random_vec(20, rng);
  CHECK(cfg_combine(c, u, 1.0) == c);
  CHECK(cfg_combine(c, u, 0.0) == u);
  auto g = cfg_combine(c, u, 3.0);
  for (std::size_t i = 0; i < 20; ++i) CHECK(g[i] == doctest::Approx(u[i] + 3.0 * (c[i] - u[i])));
  CHECK_THROWS_AS(cfg_combine(c, u, -1.0), ConfigError);
}

TEST_CASE("guided prediction branches") {
  nn::Rng prng(7);
  Denoiser den(tiny_config(), prng);
  for (auto& p : den.params()) {
    if (p.name.find("out") != std::string::npos) {
      for (double& v : p.var.values()) v = std::normal_distribution<double>(0, 0.2)(prng);
    }
  }
  Vocabulary vocab = Vocabulary::standard();
  TextEncoder text({16, 16, 1}, vocab.size(), prng);
  auto ct = tokenize("a red circle", vocab, 16), st = tokenize("a colorful image", vocab, 16);
  ct.insert(ct.end(), ct.begin(), ct.end());
  st.insert(st.end(), st.begin(), st.end());
  TextEmbedding cond = text.encode(ct, 2), scarce = text.encode(st, 2);
  std::mt19937_64 rng(7);
  Var z = test::random_var({2, 4, 8, 8}, rng, 1.0, false);
  std::vector<int> t{250, 250};
  nn::NoGradGuard guard;
  Var ec = den.predict(z, t, cond, nullptr), es = den.predict(z, t, scarce, nullptr);
  auto g1 = cfg_predict(den, z, 250, cond, scarce, nullptr, 1.0);
  auto g0 = cfg_predict(den, z, 250, cond, scarce, nullptr, 0.0);
  for (std::size_t i = 0; i < g1.size(); ++i) {
    CHECK(std::abs(g1[i] - ec.values()[i]) < 1e-12);
    CHECK(std::abs(g0[i] - es.values()[i]) < 1e-12);
  }
  auto s1 = cfg_predict(den, z, 250, cond, cond, nullptr, 0.5);
  auto s2 = cfg_predict(den, z, 250, cond, cond, nullptr, 7.0);
  CHECK(s1 == s2);
  long evals = 0;
  Var out = sample_ddim(den, z, cond, scarce, nullptr, NoiseSchedule::cosine(), 5, 3.0, &evals);
  CHECK(evals == 5);
  CHECK(out.shape() == z.shape());
}

TEST_CASE("latent loss with oracle and zero predictors") {
  NoiseSchedule s = NoiseSchedule::cosine();
  GuidanceConfig g;
  std::mt19937_64 r(8);
  std::vector<LatentExample> batch;
  for (int i = 0; i < 64; ++i) batch.push_back({test::random_vec(64, r), {"a", "red", "circle"}, false, i});
  nn::Shape shape{4, 4, 4};
  EpsPredictor oracle = [&](const Var& zt, std::span<const int> ts, const auto&, std::span<const int> idx) {
    std::vector<double> out;
    for (std::size_t n = 0; n < ts.size(); ++n) {
      auto e = oracle_eps(zt.values().subspan(n * 64, 64), batch[static_cast<std::size_t>(idx[n])].z0, ts[n], s);
      out.insert(out.end(), e.begin(), e.end());
    }
    return Var::from(zt.shape(), out);
  };
  nn::Rng rng(9);
  CHECK(latent_loss(batch, shape, oracle, s, g, rng).item() < 1e-16);
  EpsPredictor zero = [](const Var& zt, auto, const auto&, auto) { return Var::zeros(zt.shape()); };
  const double l = latent_loss(batch, shape, zero, s, g, rng).item();
  CHECK(std::abs(l - 1.0) < 4.0 * std::sqrt(2.0 / (64 * 64)));
  CHECK_THROWS_AS(latent_loss(std::span<const LatentExample>(), shape, zero, s, g, rng), ValidationError);
}

TEST_CASE("scarce replacement happens thirty percent of the time") {
  NoiseSchedule s = NoiseSchedule::cosine();
  GuidanceConfig g;
  std::vector<LatentExample> batch{{std::vector<double>(4, 0.0), {"a", "red", "circle"}, false, 0},
                                   {std::vector<double>(4, 0.0), {"a", "colorful", "image"}, true, 1}};
  nn::Shape shape{1, 2, 2};
  int eligible = 0, replaced = 0, scarce_seen = 0;
  EpsPredictor zero = [&](const Var& zt, auto, const auto& words, auto) {
    for (const auto& w : words) scarce_seen += w == std::vector<std::string>{"a", "colorful", "image"} ? 1 : 0;
    return Var::zeros(zt.shape());
  };
  nn::Rng rng(10);
  for (int k = 0; k < 10000; ++k) {
    LatentBatchInfo info;
    latent_loss(batch, shape, zero, s, g, rng, &info);
    eligible += info.eligible;
    replaced += info.replaced;
  }
  CHECK(eligible == 10000);
  CHECK(std::abs(replaced / 10000.0 - 0.30) <= 0.015);
  CHECK(scarce_seen == replaced + 10000);
}

TEST_CASE("latent loss gradient matches finite differences") {
  nn::Rng prng(11);
  Denoiser den(tiny_config(), prng);
  Vocabulary vocab = Vocabulary::standard();
  TextEncoder text({16, 16, 1}, vocab.size(), prng);
  NoiseSchedule s = NoiseSchedule::cosine();
  GuidanceConfig g;
  std::mt19937_64 r(12);
  std::vector<LatentExample> batch{{test::random_vec(4 * 8 * 8, r), {"a", "red", "circle"}, false, 0},
                                   {test::random_vec(4 * 8 * 8, r), {"a", "blue", "square"}, false, 1}};
  nn::Shape shape{4, 8, 8};
  EpsPredictor pred = [&](const Var& zt, std::span<const int> ts, const auto& words, auto) {
    std::vector<int> toks;
    for (const auto& w : words) {
      auto v = tokenize_words(w, vocab, 16);
      toks.insert(toks.end(), v.begin(), v.end());
    }
    return den.predict(zt, ts, text.encode(toks, static_cast<int>(words.size())), nullptr);
  };
  Var param;
  for (auto& p : den.params()) {
    if (p.name == "den.in.weight") param = p.var;
  }
  REQUIRE(param.defined());
  auto f = [&] {
    nn::Rng rng(13);
    return latent_loss(batch, shape, pred, s, g, rng);
  };
  CHECK(test::gradient_error(f, {param}, 1e-5, 30) < 1e-3);
}
