#pragma once

#include <cstdint>
#include <vector>

#include "lcad/layers.hpp"
#include "lcad/tensor.hpp"

namespace lcad::nn {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm clip; <= 0 disables.
  double clip_norm = 1.0;
};

/// Adam over the non-frozen entries of a parameter list.
class Adam {
 public:
  Adam(ParamList params, AdamOptions opts);

  void zero_grad();
  void step();
  void set_lr(double lr) { opts_.lr = lr; }
  double last_grad_norm() const { return last_grad_norm_; }

 private:
  ParamList params_;
  AdamOptions opts_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
  double last_grad_norm_ = 0.0;
};

}  // namespace lcad::nn
