#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <doctest.h>

#include "lcad/ops.hpp"
#include "lcad/tensor.hpp"

namespace lcad::test {

inline nn::Var random_var(nn::Shape shape, std::mt19937_64& rng, double scale = 1.0, bool grad = true) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return nn::Var::from(std::move(shape), std::move(v), grad);
}

inline std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

/// Worst relative error between analytic and central-difference gradients of
/// a scalar function over the given inputs.
inline double gradient_error(const std::function<nn::Var()>& f, std::vector<nn::Var> inputs, double h = 1e-6,
                             std::size_t max_entries = 40) {
  for (auto& v : inputs) v.zero_grad();
  nn::Var out = f();
  nn::backward(out);
  double worst = 0.0;
  for (auto& v : inputs) {
    std::vector<double> analytic(v.grad().begin(), v.grad().end());
    const std::size_t stride = std::max<std::size_t>(1, v.size() / max_entries);
    for (std::size_t i = 0; i < v.size(); i += stride) {
      const double orig = v.values()[i];
      v.values()[i] = orig + h;
      const double fp = f().item();
      v.values()[i] = orig - h;
      const double fm = f().item();
      v.values()[i] = orig;
      const double numeric = (fp - fm) / (2 * h);
      const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
      worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
    }
  }
  return worst;
}

/// Weighted sum with fixed random weights: a scalar probe for vector outputs.
inline nn::Var probe(const nn::Var& x, unsigned seed = 7) {
  std::mt19937_64 rng(seed);
  std::vector<double> w = random_vec(x.size(), rng);
  return nn::sum(nn::mul_const(x, w));
}

}  // namespace lcad::test
