#pragma once

#include <random>
#include <string>

#include "lcad/ops.hpp"
#include "lcad/tensor.hpp"

namespace lcad::nn {

using Rng = std::mt19937_64;

/// He-style uniform init scaled by fan-in.
Var init_uniform(Shape shape, int fan_in, Rng& rng, double gain = 1.0);

struct Conv2d {
  Var weight;
  Var bias;
  int stride = 1;
  int pad = 1;
  Pad mode = Pad::kZero;

  static Conv2d make(int cin, int cout, int k, int stride, Pad mode, Rng& rng, bool with_bias = true);
  Var operator()(const Var& x) const { return conv2d(x, weight, bias, stride, pad, mode); }
  void collect(ParamList& out, const std::string& prefix) const;
};

struct Linear {
  Var weight;
  Var bias;

  static Linear make(int in, int out, Rng& rng, bool with_bias = true);
  Var operator()(const Var& x) const { return linear(x, weight, bias); }
  void collect(ParamList& out, const std::string& prefix) const;
};

struct GroupNorm {
  Var gamma;
  Var beta;
  int groups = 8;

  static GroupNorm make(int channels, int groups);
  Var operator()(const Var& x) const { return group_norm(x, gamma, beta, groups); }
  void collect(ParamList& out, const std::string& prefix) const;
};

}  // namespace lcad::nn
