#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lcad/tensor.hpp"

namespace lcad::nn {

enum class Pad { kZero, kReflect };

// Elementwise (operands of identical shape).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// Multiplies by a constant (non-differentiable) array of the same size.
Var mul_const(const Var& a, std::span<const double> c);

Var silu(const Var& x);
Var sigmoid(const Var& x);
Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var abs(const Var& x);
Var square(const Var& x);
/// sqrt(x + eps)
Var sqrt_eps(const Var& x, double eps);

Var sum(const Var& x);
Var mean(const Var& x);

Var reshape(const Var& x, Shape shape);

/// x: [N,Ci,H,W], w: [Co,Ci,k,k], b: [Co] or undefined.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, Pad mode);
/// x: [..., in], w: [out, in], b: [out] or undefined.
Var linear(const Var& x, const Var& w, const Var& b);
/// x: [N,C,H,W] plus per-(sample, channel) offsets v: [N,C].
Var add_channel_offset(const Var& x, const Var& v);
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5);
Var avg_pool2(const Var& x);
Var upsample_nearest2(const Var& x);
/// Half-pixel-centred bilinear resampling (no anti-aliasing).
Var resize_bilinear(const Var& x, int out_h, int out_w);
Var concat_channels(const Var& a, const Var& b);
/// [N,C,H,W] -> [N,H*W,C]
Var nchw_to_tokens(const Var& x);
/// [N,H*W,C] -> [N,C,H,W]
Var tokens_to_nchw(const Var& x, int h, int w);
/// table: [V,D], ids: n*t indices -> [n,t,D]
Var embedding(const Var& table, std::span<const int> ids, int n, int t);
/// Adds `pos` ([t,D]) to every sample of x ([n,t,D]).
Var add_positional(const Var& x, const Var& pos);

/// Replacement of selected token columns of a normalized attention map for
/// one sample. `values` is row-major [positions x columns.size()].
struct AttentionOverride {
  std::vector<int> columns;
  std::vector<double> values;
};

/// Head-averaged maps of one attention call, each [N, P, T].
struct AttentionTrace {
  int n = 0, p = 0, t = 0;
  std::vector<double> raw;
  std::vector<double> weights;
};

/// Multi-head scaled dot-product attention. q: [N,P,D], k,v: [N,T,D].
/// key_valid has N*T entries; invalid keys get zero weight. overrides, when
/// non-empty, has one (possibly null) entry per sample; overridden columns
/// take the supplied values and the remaining valid columns are rescaled to
/// keep each row summing to one (if the supplied values already sum to >= 1
/// they are normalized and the rest set to zero). Overrides are inference
/// only and reject gradient recording.
Var attention(const Var& q, const Var& k, const Var& v, int heads,
              std::span<const std::uint8_t> key_valid,
              std::span<const AttentionOverride* const> overrides = {},
              AttentionTrace* trace = nullptr);

/// Mean squared difference against a constant target.
Var mse_const(const Var& x, std::span<const double> target);

}  // namespace lcad::nn
