#include "lcad/optim.hpp"

#include <cmath>

#include "lcad/error.hpp"

namespace lcad::nn {

Var init_uniform(Shape shape, int fan_in, Rng& rng, double gain) {
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = u(rng);
  return Var::from(std::move(shape), std::move(v), true);
}

Conv2d Conv2d::make(int cin, int cout, int k, int stride, Pad mode, Rng& rng, bool with_bias) {
  Conv2d c;
  c.weight = init_uniform({cout, cin, k, k}, cin * k * k, rng);
  if (with_bias) c.bias = Var::zeros({cout}, true);
  c.stride = stride;
  c.pad = k / 2;
  c.mode = mode;
  return c;
}

void Conv2d::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight, false});
  if (bias.defined()) out.push_back({prefix + ".bias", bias, false});
}

Linear Linear::make(int in, int out, Rng& rng, bool with_bias) {
  Linear l;
  l.weight = init_uniform({out, in}, in, rng);
  if (with_bias) l.bias = Var::zeros({out}, true);
  return l;
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight, false});
  if (bias.defined()) out.push_back({prefix + ".bias", bias, false});
}

GroupNorm GroupNorm::make(int channels, int groups) {
  return {Var::full({channels}, 1.0, true), Var::zeros({channels}, true), groups};
}

void GroupNorm::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".gamma", gamma, false});
  out.push_back({prefix + ".beta", beta, false});
}

Adam::Adam(ParamList params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var.size(), 0.0);
    v_.emplace_back(p.var.size(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  double scale = 1.0;
  if (opts_.clip_norm > 0.0) {
    double sq = 0.0;
    for (auto& p : params_) {
      if (p.frozen) continue;
      for (double g : p.var.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    last_grad_norm_ = norm;
    if (norm > opts_.clip_norm) scale = opts_.clip_norm / norm;
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (p.frozen) continue;
    auto g = p.var.grad();
    if (g.empty()) continue;
    auto w = p.var.values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] * scale;
      m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * gj;
      v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * gj * gj;
      w[j] -= opts_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + opts_.eps);
    }
  }
}

}  // namespace lcad::nn
