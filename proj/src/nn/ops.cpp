#include "lcad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "lcad/error.hpp"
#include "lcad/simd.hpp"

namespace lcad::nn {
namespace {

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const Var& x, std::size_t rank, const char* op) {
  if (x.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(x.shape()));
  }
}

Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

// Unary elementwise op with derivative expressed from (x, y).
template <typename F, typename D>
Var unary(const Var& x, F f, D df) {
  std::vector<double> out(x.size());
  const double* xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xs[i]);
  return make_result(x.shape(), std::move(out), {x}, [df](Node& n) {
    Node& p = parent(n, 0);
    if (!p.requires_grad) return;
    double* g = p.grad_data();
    for (std::size_t i = 0; i < n.value.size(); ++i) g[i] += n.grad[i] * df(p.value[i], n.value[i]);
  });
}

inline int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

struct ConvGeom {
  int ci, h, w, k, stride, pad, ho, wo;
  Pad mode;
};

// col: [ci*k*k, ho*wo]
void im2col(const double* x, const ConvGeom& g, double* col) {
  const int hw = g.ho * g.wo;
  for (int c = 0; c < g.ci; ++c) {
    const double* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        double* row = col + (static_cast<std::size_t>(c) * g.k * g.k + ki * g.k + kj) * hw;
        for (int oy = 0; oy < g.ho; ++oy) {
          int iy = oy * g.stride + ki - g.pad;
          bool yin = iy >= 0 && iy < g.h;
          if (!yin && g.mode == Pad::kReflect) {
            iy = reflect(iy, g.h);
            yin = true;
          }
          double* dst = row + oy * g.wo;
          if (!yin) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            int ix = ox * g.stride + kj - g.pad;
            if (ix >= 0 && ix < g.w) {
              dst[ox] = src[ix];
            } else if (g.mode == Pad::kReflect) {
              dst[ox] = src[reflect(ix, g.w)];
            } else {
              dst[ox] = 0.0;
            }
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeom& g, double* dx) {
  const int hw = g.ho * g.wo;
  for (int c = 0; c < g.ci; ++c) {
    double* xc = dx + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        const double* row = col + (static_cast<std::size_t>(c) * g.k * g.k + ki * g.k + kj) * hw;
        for (int oy = 0; oy < g.ho; ++oy) {
          int iy = oy * g.stride + ki - g.pad;
          if (iy < 0 || iy >= g.h) {
            if (g.mode != Pad::kReflect) continue;
            iy = reflect(iy, g.h);
          }
          const double* src = row + oy * g.wo;
          double* dst = xc + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            int ix = ox * g.stride + kj - g.pad;
            if (ix < 0 || ix >= g.w) {
              if (g.mode != Pad::kReflect) continue;
              ix = reflect(ix, g.w);
            }
            dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      Node& p = parent(n, k);
      if (p.requires_grad) simd::axpy(1.0, n.grad.data(), p.grad_data(), n.grad.size());
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    if (parent(n, 0).requires_grad) {
      simd::axpy(1.0, n.grad.data(), parent(n, 0).grad_data(), n.grad.size());
    }
    if (parent(n, 1).requires_grad) {
      simd::axpy(-1.0, n.grad.data(), parent(n, 1).grad_data(), n.grad.size());
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    if (pa.requires_grad) {
      double* g = pa.grad_data();
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      double* g = pb.grad_data();
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * pa.value[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  require_same(a, b, "div");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    if (pa.requires_grad) {
      double* g = pa.grad_data();
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] / pb.value[i];
    }
    if (pb.requires_grad) {
      double* g = pb.grad_data();
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] -= n.grad[i] * n.value[i] / pb.value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var mul_const(const Var& a, std::span<const double> c) {
  if (c.size() != a.size()) throw ShapeError("mul_const: constant size mismatch");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c[i];
  std::vector<double> cc(c.begin(), c.end());
  return make_result(a.shape(), std::move(out), {a}, [cc = std::move(cc)](Node& n) {
    Node& p = parent(n, 0);
    double* g = p.grad_data();
    for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * cc[i];
  });
}

Var silu(const Var& x) {
  return unary(
      x, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(const Var& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var abs(const Var& x) {
  return unary(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var sqrt_eps(const Var& x, double eps) {
  return unary(
      x, [eps](double v) { return std::sqrt(v + eps); }, [](double, double y) { return 0.5 / y; });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_result({1}, {s}, {x}, [](Node& n) {
    Node& p = parent(n, 0);
    double* g = p.grad_data();
    const double go = n.grad[0];
    for (std::size_t i = 0; i < p.value.size(); ++i) g[i] += go;
  });
}

Var mean(const Var& x) {
  if (x.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Var reshape(const Var& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return make_result(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()),
                     {x}, [](Node& n) {
                       Node& p = parent(n, 0);
                       simd::axpy(1.0, n.grad.data(), p.grad_data(), n.grad.size());
                     });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, Pad mode) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d weight");
  const int nb = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(0), k = w.dim(2);
  if (w.dim(1) != ci || w.dim(3) != k) {
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  if (b.defined() && (b.shape().size() != 1 || b.dim(0) != co)) {
    throw ShapeError("conv2d: bias shape " + shape_str(b.shape()));
  }
  if (mode == Pad::kReflect && (pad >= h || pad >= wd)) {
    throw ShapeError("conv2d: reflect padding larger than input");
  }
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: empty output");
  const ConvGeom g{ci, h, wd, k, stride, pad, ho, wo, mode};
  const int kk = ci * k * k;
  const int hw = ho * wo;
  const bool direct = (k == 1 && stride == 1 && pad == 0);

  std::vector<double> out(static_cast<std::size_t>(nb) * co * hw);
  std::vector<double> col(direct ? 0 : static_cast<std::size_t>(kk) * hw);
  for (int n = 0; n < nb; ++n) {
    const double* xn = x.data() + static_cast<std::size_t>(n) * ci * h * wd;
    const double* src = xn;
    if (!direct) {
      im2col(xn, g, col.data());
      src = col.data();
    }
    double* on = out.data() + static_cast<std::size_t>(n) * co * hw;
    simd::gemm({false, false, co, hw, kk, kk, hw, hw}, w.data(), src, 0.0, on);
    if (b.defined()) {
      for (int c = 0; c < co; ++c) {
        const double bv = b.data()[c];
        double* row = on + static_cast<std::size_t>(c) * hw;
        for (int i = 0; i < hw; ++i) row[i] += bv;
      }
    }
  }

  return make_result({nb, co, ho, wo}, std::move(out), {x, w, b}, [g, nb, co, kk, hw, direct](Node& n) {
    Node& px = parent(n, 0);
    Node& pw = parent(n, 1);
    Node* pb = n.parents.size() > 2 ? n.parents[2].get() : nullptr;
    const std::size_t in_sz = static_cast<std::size_t>(g.ci) * g.h * g.w;
    std::vector<double> col(direct ? 0 : static_cast<std::size_t>(kk) * hw);
    std::vector<double> dcol(direct ? 0 : static_cast<std::size_t>(kk) * hw);
    for (int s = 0; s < nb; ++s) {
      const double* dy = n.grad.data() + static_cast<std::size_t>(s) * co * hw;
      const double* xs = px.value.data() + s * in_sz;
      if (pw.requires_grad) {
        const double* src = xs;
        if (!direct) {
          im2col(xs, g, col.data());
          src = col.data();
        }
        simd::gemm({false, true, co, kk, hw, hw, hw, kk}, dy, src, 1.0, pw.grad_data());
      }
      if (px.requires_grad) {
        double* dx = px.grad_data() + s * in_sz;
        if (direct) {
          simd::gemm({true, false, kk, hw, co, kk, hw, hw}, pw.value.data(), dy, 1.0, dx);
        } else {
          simd::gemm({true, false, kk, hw, co, kk, hw, hw}, pw.value.data(), dy, 0.0, dcol.data());
          col2im(dcol.data(), g, dx);
        }
      }
      if (pb != nullptr && pb->requires_grad) {
        double* db = pb->grad_data();
        for (int c = 0; c < co; ++c) {
          const double* row = dy + static_cast<std::size_t>(c) * hw;
          double acc = 0.0;
          for (int i = 0; i < hw; ++i) acc += row[i];
          db[c] += acc;
        }
      }
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  require_rank(w, 2, "linear weight");
  const int in = w.dim(1), outd = w.dim(0);
  if (x.shape().empty() || x.shape().back() != in) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  }
  if (b.defined() && (b.shape().size() != 1 || b.dim(0) != outd)) {
    throw ShapeError("linear: bias shape " + shape_str(b.shape()));
  }
  const int rows = static_cast<int>(x.size() / static_cast<std::size_t>(in));
  Shape oshape = x.shape();
  oshape.back() = outd;
  std::vector<double> out(static_cast<std::size_t>(rows) * outd);
  simd::gemm({false, true, rows, outd, in, in, in, outd}, x.data(), w.data(), 0.0, out.data());
  if (b.defined()) {
    for (int r = 0; r < rows; ++r) simd::axpy(1.0, b.data(), out.data() + static_cast<std::size_t>(r) * outd, outd);
  }
  return make_result(std::move(oshape), std::move(out), {x, w, b}, [rows, in, outd](Node& n) {
    Node& px = parent(n, 0);
    Node& pw = parent(n, 1);
    Node* pb = n.parents.size() > 2 ? n.parents[2].get() : nullptr;
    if (px.requires_grad) {
      simd::gemm({false, false, rows, in, outd, outd, in, in}, n.grad.data(), pw.value.data(), 1.0,
                 px.grad_data());
    }
    if (pw.requires_grad) {
      simd::gemm({true, false, outd, in, rows, outd, in, in}, n.grad.data(), px.value.data(), 1.0,
                 pw.grad_data());
    }
    if (pb != nullptr && pb->requires_grad) {
      double* db = pb->grad_data();
      for (int r = 0; r < rows; ++r) simd::axpy(1.0, n.grad.data() + static_cast<std::size_t>(r) * outd, db, outd);
    }
  });
}

Var add_channel_offset(const Var& x, const Var& v) {
  require_rank(x, 4, "add_channel_offset");
  const int nb = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (v.shape() != Shape{nb, c}) {
    throw ShapeError("add_channel_offset: offsets " + shape_str(v.shape()) + " for " + shape_str(x.shape()));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  for (int i = 0; i < nb * c; ++i) {
    const double o = v.data()[i];
    double* row = out.data() + static_cast<std::size_t>(i) * hw;
    for (int j = 0; j < hw; ++j) row[j] += o;
  }
  return make_result(x.shape(), std::move(out), {x, v}, [nb, c, hw](Node& n) {
    Node& px = parent(n, 0);
    Node& pv = parent(n, 1);
    if (px.requires_grad) simd::axpy(1.0, n.grad.data(), px.grad_data(), n.grad.size());
    if (pv.requires_grad) {
      double* g = pv.grad_data();
      for (int i = 0; i < nb * c; ++i) {
        const double* row = n.grad.data() + static_cast<std::size_t>(i) * hw;
        double acc = 0.0;
        for (int j = 0; j < hw; ++j) acc += row[j];
        g[i] += acc;
      }
    }
  });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
  require_rank(x, 4, "group_norm");
  const int nb = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (groups <= 0 || c % groups != 0) throw ShapeError("group_norm: channels not divisible by groups");
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) throw ShapeError("group_norm: affine shape");
  const int cg = c / groups;
  const std::size_t gsz = static_cast<std::size_t>(cg) * hw;
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(static_cast<std::size_t>(nb) * groups);
  for (int s = 0; s < nb; ++s) {
    for (int gi = 0; gi < groups; ++gi) {
      const std::size_t off = (static_cast<std::size_t>(s) * c + static_cast<std::size_t>(gi) * cg) * hw;
      const double* xs = x.data() + off;
      double m = 0.0;
      for (std::size_t i = 0; i < gsz; ++i) m += xs[i];
      m /= static_cast<double>(gsz);
      double var = 0.0;
      for (std::size_t i = 0; i < gsz; ++i) var += (xs[i] - m) * (xs[i] - m);
      var /= static_cast<double>(gsz);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(s) * groups + gi] = is;
      for (int cc = 0; cc < cg; ++cc) {
        const int ch = gi * cg + cc;
        const double ga = gamma.data()[ch], be = beta.data()[ch];
        for (int i = 0; i < hw; ++i) {
          const std::size_t idx = off + static_cast<std::size_t>(cc) * hw + i;
          const double xh = (x.data()[idx] - m) * is;
          xhat[idx] = xh;
          out[idx] = ga * xh + be;
        }
      }
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [nb, c, hw, groups, cg, gsz, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
    Node& px = parent(n, 0);
    Node& pg = parent(n, 1);
    Node& pbeta = parent(n, 2);
    const double* dy = n.grad.data();
    if (pg.requires_grad || pbeta.requires_grad) {
      double* dg = pg.requires_grad ? pg.grad_data() : nullptr;
      double* db = pbeta.requires_grad ? pbeta.grad_data() : nullptr;
      for (int s = 0; s < nb; ++s) {
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t off = (static_cast<std::size_t>(s) * c + ch) * hw;
          double sg = 0.0, sb = 0.0;
          for (int i = 0; i < hw; ++i) {
            sg += dy[off + i] * xhat[off + i];
            sb += dy[off + i];
          }
          if (dg) dg[ch] += sg;
          if (db) db[ch] += sb;
        }
      }
    }
    if (!px.requires_grad) return;
    double* dx = px.grad_data();
    std::vector<double> dxh(gsz);
    for (int s = 0; s < nb; ++s) {
      for (int gi = 0; gi < groups; ++gi) {
        const std::size_t off = (static_cast<std::size_t>(s) * c + static_cast<std::size_t>(gi) * cg) * hw;
        double s1 = 0.0, s2 = 0.0;
        for (int cc = 0; cc < cg; ++cc) {
          const double ga = pg.value[static_cast<std::size_t>(gi) * cg + cc];
          for (int i = 0; i < hw; ++i) {
            const std::size_t li = static_cast<std::size_t>(cc) * hw + i;
            dxh[li] = dy[off + li] * ga;
            s1 += dxh[li];
            s2 += dxh[li] * xhat[off + li];
          }
        }
        const double is = inv_std[static_cast<std::size_t>(s) * groups + gi];
        const double inv_n = 1.0 / static_cast<double>(gsz);
        for (std::size_t li = 0; li < gsz; ++li) {
          dx[off + li] += is * (dxh[li] - inv_n * s1 - xhat[off + li] * inv_n * s2);
        }
      }
    }
  });
}

Var avg_pool2(const Var& x) {
  require_rank(x, 4, "avg_pool2");
  const int nb = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) throw ShapeError("avg_pool2: odd spatial size " + shape_str(x.shape()));
  const int ho = h / 2, wo = w / 2;
  std::vector<double> out(static_cast<std::size_t>(nb) * c * ho * wo);
  for (int p = 0; p < nb * c; ++p) {
    const double* src = x.data() + static_cast<std::size_t>(p) * h * w;
    double* dst = out.data() + static_cast<std::size_t>(p) * ho * wo;
    for (int y = 0; y < ho; ++y) {
      for (int xx = 0; xx < wo; ++xx) {
        const double* s0 = src + (2 * y) * w + 2 * xx;
        dst[y * wo + xx] = 0.25 * (s0[0] + s0[1] + s0[w] + s0[w + 1]);
      }
    }
  }
  return make_result({nb, c, ho, wo}, std::move(out), {x}, [nb, c, h, w, ho, wo](Node& n) {
    Node& px = parent(n, 0);
    double* dx = px.grad_data();
    for (int p = 0; p < nb * c; ++p) {
      const double* g = n.grad.data() + static_cast<std::size_t>(p) * ho * wo;
      double* d = dx + static_cast<std::size_t>(p) * h * w;
      for (int y = 0; y < ho; ++y) {
        for (int xx = 0; xx < wo; ++xx) {
          const double v = 0.25 * g[y * wo + xx];
          double* d0 = d + (2 * y) * w + 2 * xx;
          d0[0] += v;
          d0[1] += v;
          d0[w] += v;
          d0[w + 1] += v;
        }
      }
    }
  });
}

Var upsample_nearest2(const Var& x) {
  require_rank(x, 4, "upsample_nearest2");
  const int nb = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = 2 * h, wo = 2 * w;
  std::vector<double> out(static_cast<std::size_t>(nb) * c * ho * wo);
  for (int p = 0; p < nb * c; ++p) {
    const double* src = x.data() + static_cast<std::size_t>(p) * h * w;
    double* dst = out.data() + static_cast<std::size_t>(p) * ho * wo;
    for (int y = 0; y < ho; ++y) {
      for (int xx = 0; xx < wo; ++xx) dst[y * wo + xx] = src[(y / 2) * w + xx / 2];
    }
  }
  return make_result({nb, c, ho, wo}, std::move(out), {x}, [nb, c, h, w, ho, wo](Node& n) {
    Node& px = parent(n, 0);
    double* dx = px.grad_data();
    for (int p = 0; p < nb * c; ++p) {
      const double* g = n.grad.data() + static_cast<std::size_t>(p) * ho * wo;
      double* d = dx + static_cast<std::size_t>(p) * h * w;
      for (int y = 0; y < ho; ++y) {
        for (int xx = 0; xx < wo; ++xx) d[(y / 2) * w + xx / 2] += g[y * wo + xx];
      }
    }
  });
}

namespace {
struct Tap {
  int i0, i1;
  double w0, w1;
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double sc = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * sc - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in - 1);
    const double f = src - i0;
    taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - f, f};
  }
  return taps;
}
}  // namespace

Var resize_bilinear(const Var& x, int out_h, int out_w) {
  require_rank(x, 4, "resize_bilinear");
  const int nb = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out_h <= 0 || out_w <= 0) throw ShapeError("resize_bilinear: empty target");
  if (out_h == h && out_w == w) return reshape(x, x.shape());
  auto ty = bilinear_taps(h, out_h);
  auto tx = bilinear_taps(w, out_w);
  std::vector<double> out(static_cast<std::size_t>(nb) * c * out_h * out_w);
  for (int p = 0; p < nb * c; ++p) {
    const double* src = x.data() + static_cast<std::size_t>(p) * h * w;
    double* dst = out.data() + static_cast<std::size_t>(p) * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      const Tap& a = ty[static_cast<std::size_t>(y)];
      for (int xx = 0; xx < out_w; ++xx) {
        const Tap& b = tx[static_cast<std::size_t>(xx)];
        dst[y * out_w + xx] = a.w0 * (b.w0 * src[a.i0 * w + b.i0] + b.w1 * src[a.i0 * w + b.i1]) +
                              a.w1 * (b.w0 * src[a.i1 * w + b.i0] + b.w1 * src[a.i1 * w + b.i1]);
      }
    }
  }
  return make_result({nb, c, out_h, out_w}, std::move(out), {x},
                     [nb, c, h, w, out_h, out_w, ty = std::move(ty), tx = std::move(tx)](Node& n) {
    Node& px = parent(n, 0);
    double* dx = px.grad_data();
    for (int p = 0; p < nb * c; ++p) {
      const double* g = n.grad.data() + static_cast<std::size_t>(p) * out_h * out_w;
      double* d = dx + static_cast<std::size_t>(p) * h * w;
      for (int y = 0; y < out_h; ++y) {
        const Tap& a = ty[static_cast<std::size_t>(y)];
        for (int xx = 0; xx < out_w; ++xx) {
          const Tap& b = tx[static_cast<std::size_t>(xx)];
          const double gv = g[y * out_w + xx];
          d[a.i0 * w + b.i0] += gv * a.w0 * b.w0;
          d[a.i0 * w + b.i1] += gv * a.w0 * b.w1;
          d[a.i1 * w + b.i0] += gv * a.w1 * b.w0;
          d[a.i1 * w + b.i1] += gv * a.w1 * b.w1;
        }
      }
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  const int nb = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
  if (b.dim(0) != nb || b.dim(2) != h || b.dim(3) != w) {
    throw ShapeError("concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t sa = static_cast<std::size_t>(ca) * h * w, sb = static_cast<std::size_t>(cb) * h * w;
  std::vector<double> out(static_cast<std::size_t>(nb) * (sa + sb));
  for (int s = 0; s < nb; ++s) {
    std::copy_n(a.data() + s * sa, sa, out.data() + s * (sa + sb));
    std::copy_n(b.data() + s * sb, sb, out.data() + s * (sa + sb) + sa);
  }
  return make_result({nb, ca + cb, h, w}, std::move(out), {a, b}, [nb, sa, sb](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    for (int s = 0; s < nb; ++s) {
      const double* g = n.grad.data() + s * (sa + sb);
      if (pa.requires_grad) simd::axpy(1.0, g, pa.grad_data() + s * sa, sa);
      if (pb.requires_grad) simd::axpy(1.0, g + sa, pb.grad_data() + s * sb, sb);
    }
  });
}

Var nchw_to_tokens(const Var& x) {
  require_rank(x, 4, "nchw_to_tokens");
  const int nb = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(x.size());
  for (int s = 0; s < nb; ++s) {
    const double* src = x.data() + static_cast<std::size_t>(s) * c * hw;
    double* dst = out.data() + static_cast<std::size_t>(s) * c * hw;
    for (int ch = 0; ch < c; ++ch) {
      for (int p = 0; p < hw; ++p) dst[static_cast<std::size_t>(p) * c + ch] = src[static_cast<std::size_t>(ch) * hw + p];
    }
  }
  return make_result({nb, hw, c}, std::move(out), {x}, [nb, c, hw](Node& n) {
    double* dx = parent(n, 0).grad_data();
    for (int s = 0; s < nb; ++s) {
      const double* g = n.grad.data() + static_cast<std::size_t>(s) * c * hw;
      double* d = dx + static_cast<std::size_t>(s) * c * hw;
      for (int ch = 0; ch < c; ++ch) {
        for (int p = 0; p < hw; ++p) d[static_cast<std::size_t>(ch) * hw + p] += g[static_cast<std::size_t>(p) * c + ch];
      }
    }
  });
}

Var tokens_to_nchw(const Var& x, int h, int w) {
  require_rank(x, 3, "tokens_to_nchw");
  const int nb = x.dim(0), hw = x.dim(1), c = x.dim(2);
  if (hw != h * w) throw ShapeError("tokens_to_nchw: token count does not match spatial size");
  std::vector<double> out(x.size());
  for (int s = 0; s < nb; ++s) {
    const double* src = x.data() + static_cast<std::size_t>(s) * c * hw;
    double* dst = out.data() + static_cast<std::size_t>(s) * c * hw;
    for (int p = 0; p < hw; ++p) {
      for (int ch = 0; ch < c; ++ch) dst[static_cast<std::size_t>(ch) * hw + p] = src[static_cast<std::size_t>(p) * c + ch];
    }
  }
  return make_result({nb, c, h, w}, std::move(out), {x}, [nb, c, hw](Node& n) {
    double* dx = parent(n, 0).grad_data();
    for (int s = 0; s < nb; ++s) {
      const double* g = n.grad.data() + static_cast<std::size_t>(s) * c * hw;
      double* d = dx + static_cast<std::size_t>(s) * c * hw;
      for (int p = 0; p < hw; ++p) {
        for (int ch = 0; ch < c; ++ch) d[static_cast<std::size_t>(p) * c + ch] += g[static_cast<std::size_t>(ch) * hw + p];
      }
    }
  });
}

Var embedding(const Var& table, std::span<const int> ids, int n, int t) {
  require_rank(table, 2, "embedding");
  const int vocab = table.dim(0), d = table.dim(1);
  if (ids.size() != static_cast<std::size_t>(n) * t) throw ShapeError("embedding: id count");
  std::vector<double> out(static_cast<std::size_t>(n) * t * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) {
      throw ValidationError("embedding: token index " + std::to_string(ids[i]) + " outside vocabulary of " +
                            std::to_string(vocab));
    }
    std::copy_n(table.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return make_result({n, t, d}, std::move(out), {table}, [d, idv = std::move(idv)](Node& n) {
    double* g = parent(n, 0).grad_data();
    for (std::size_t i = 0; i < idv.size(); ++i) {
      simd::axpy(1.0, n.grad.data() + i * d, g + static_cast<std::size_t>(idv[i]) * d, d);
    }
  });
}

Var add_positional(const Var& x, const Var& pos) {
  require_rank(x, 3, "add_positional");
  const int nb = x.dim(0), t = x.dim(1), d = x.dim(2);
  if (pos.dim(0) < t || pos.dim(1) != d) throw ShapeError("add_positional: table too small");
  const std::size_t sz = static_cast<std::size_t>(t) * d;
  std::vector<double> out(x.values().begin(), x.values().end());
  for (int s = 0; s < nb; ++s) simd::axpy(1.0, pos.data(), out.data() + s * sz, sz);
  return make_result(x.shape(), std::move(out), {x, pos}, [nb, sz](Node& n) {
    Node& px = parent(n, 0);
    Node& pp = parent(n, 1);
    if (px.requires_grad) simd::axpy(1.0, n.grad.data(), px.grad_data(), n.grad.size());
    if (pp.requires_grad) {
      for (int s = 0; s < nb; ++s) simd::axpy(1.0, n.grad.data() + s * sz, pp.grad_data(), sz);
    }
  });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads, std::span<const std::uint8_t> key_valid,
              std::span<const AttentionOverride* const> overrides, AttentionTrace* trace) {
  require_rank(q, 3, "attention q");
  require_rank(k, 3, "attention k");
  require_rank(v, 3, "attention v");
  const int nb = q.dim(0), np = q.dim(1), dm = q.dim(2), nt = k.dim(1);
  if (k.dim(0) != nb || v.dim(0) != nb || k.dim(2) != dm || v.dim(2) != dm || v.dim(1) != nt) {
    throw ShapeError("attention: q " + shape_str(q.shape()) + " k " + shape_str(k.shape()) + " v " +
                     shape_str(v.shape()));
  }
  if (heads <= 0 || dm % heads != 0) throw ShapeError("attention: model width not divisible by heads");
  if (key_valid.size() != static_cast<std::size_t>(nb) * nt) throw ShapeError("attention: key mask size");
  const bool has_override = std::any_of(overrides.begin(), overrides.end(), [](auto* o) { return o != nullptr; });
  if (!overrides.empty() && overrides.size() != static_cast<std::size_t>(nb)) {
    throw ShapeError("attention: one override slot per sample required");
  }
  if (has_override && grad_enabled() && (q.requires_grad() || k.requires_grad() || v.requires_grad())) {
    throw Error("attention: overrides are inference-only");
  }
  const int dh = dm / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // weights: [N, H, P, T]
  std::vector<double> wts(static_cast<std::size_t>(nb) * heads * np * nt, 0.0);
  std::vector<double> out(static_cast<std::size_t>(nb) * np * dm, 0.0);
  if (trace != nullptr) {
    trace->n = nb;
    trace->p = np;
    trace->t = nt;
    trace->raw.assign(static_cast<std::size_t>(nb) * np * nt, 0.0);
    trace->weights.assign(static_cast<std::size_t>(nb) * np * nt, 0.0);
  }
  std::vector<double> row(static_cast<std::size_t>(nt));
  for (int s = 0; s < nb; ++s) {
    const std::uint8_t* valid = key_valid.data() + static_cast<std::size_t>(s) * nt;
    const AttentionOverride* ov = overrides.empty() ? nullptr : overrides[static_cast<std::size_t>(s)];
    if (ov != nullptr) {
      if (ov->values.size() != ov->columns.size() * static_cast<std::size_t>(np)) {
        throw ShapeError("attention: override values do not match " + std::to_string(np) + " positions");
      }
      for (int col : ov->columns) {
        if (col < 0 || col >= nt) throw ShapeError("attention: override column out of range");
      }
    }
    for (int hd = 0; hd < heads; ++hd) {
      for (int p = 0; p < np; ++p) {
        const double* qp = q.data() + (static_cast<std::size_t>(s) * np + p) * dm + hd * dh;
        double mx = -std::numeric_limits<double>::infinity();
        for (int t = 0; t < nt; ++t) {
          if (!valid[t]) continue;
          const double* kt = k.data() + (static_cast<std::size_t>(s) * nt + t) * dm + hd * dh;
          row[t] = simd::dot(qp, kt, dh) * inv_sqrt;
          mx = std::max(mx, row[t]);
          if (trace != nullptr) trace->raw[(static_cast<std::size_t>(s) * np + p) * nt + t] += row[t] / heads;
        }
        double* wrow = wts.data() + ((static_cast<std::size_t>(s) * heads + hd) * np + p) * nt;
        double z = 0.0;
        for (int t = 0; t < nt; ++t) {
          if (!valid[t]) continue;
          wrow[t] = std::exp(row[t] - mx);
          z += wrow[t];
        }
        if (z > 0.0) {
          for (int t = 0; t < nt; ++t) wrow[t] /= z;
        }
        if (ov != nullptr && !ov->columns.empty()) {
          const std::size_t nc = ov->columns.size();
          double ssum = 0.0;
          for (std::size_t j = 0; j < nc; ++j) ssum += ov->values[static_cast<std::size_t>(p) * nc + j];
          double rest = 0.0;
          for (int t = 0; t < nt; ++t) {
            if (valid[t] && std::find(ov->columns.begin(), ov->columns.end(), t) == ov->columns.end()) rest += wrow[t];
          }
          if (ssum >= 1.0) {
            for (int t = 0; t < nt; ++t) wrow[t] = 0.0;
            for (std::size_t j = 0; j < nc; ++j) wrow[ov->columns[j]] = ov->values[static_cast<std::size_t>(p) * nc + j] / ssum;
          } else {
            const double f = rest > 0.0 ? (1.0 - ssum) / rest : 0.0;
            for (int t = 0; t < nt; ++t) wrow[t] *= f;
            for (std::size_t j = 0; j < nc; ++j) wrow[ov->columns[j]] = ov->values[static_cast<std::size_t>(p) * nc + j];
          }
        }
        if (trace != nullptr) {
          double* tw = trace->weights.data() + (static_cast<std::size_t>(s) * np + p) * nt;
          for (int t = 0; t < nt; ++t) tw[t] += wrow[t] / heads;
        }
        double* op = out.data() + (static_cast<std::size_t>(s) * np + p) * dm + hd * dh;
        for (int t = 0; t < nt; ++t) {
          if (wrow[t] == 0.0) continue;
          const double* vt = v.data() + (static_cast<std::size_t>(s) * nt + t) * dm + hd * dh;
          simd::axpy(wrow[t], vt, op, dh);
        }
      }
    }
  }
  return make_result({nb, np, dm}, std::move(out), {q, k, v},
                     [nb, np, nt, dm, heads, dh, inv_sqrt, wts = std::move(wts)](Node& n) {
    Node& pq = parent(n, 0);
    Node& pk = parent(n, 1);
    Node& pv = parent(n, 2);
    double* dq = pq.requires_grad ? pq.grad_data() : nullptr;
    double* dk = pk.requires_grad ? pk.grad_data() : nullptr;
    double* dv = pv.requires_grad ? pv.grad_data() : nullptr;
    std::vector<double> dw(static_cast<std::size_t>(nt));
    for (int s = 0; s < nb; ++s) {
      for (int hd = 0; hd < heads; ++hd) {
        for (int p = 0; p < np; ++p) {
          const double* go = n.grad.data() + (static_cast<std::size_t>(s) * np + p) * dm + hd * dh;
          const double* wrow = wts.data() + ((static_cast<std::size_t>(s) * heads + hd) * np + p) * nt;
          double dot_wd = 0.0;
          for (int t = 0; t < nt; ++t) {
            if (wrow[t] == 0.0) {
              dw[t] = 0.0;
              continue;
            }
            const std::size_t voff = (static_cast<std::size_t>(s) * nt + t) * dm + hd * dh;
            dw[t] = simd::dot(go, pv.value.data() + voff, dh);
            dot_wd += dw[t] * wrow[t];
            if (dv) simd::axpy(wrow[t], go, dv + voff, dh);
          }
          const std::size_t qoff = (static_cast<std::size_t>(s) * np + p) * dm + hd * dh;
          for (int t = 0; t < nt; ++t) {
            if (wrow[t] == 0.0) continue;
            const double ds = wrow[t] * (dw[t] - dot_wd) * inv_sqrt;
            const std::size_t koff = (static_cast<std::size_t>(s) * nt + t) * dm + hd * dh;
            if (dq) simd::axpy(ds, pk.value.data() + koff, dq + qoff, dh);
            if (dk) simd::axpy(ds, pq.value.data() + qoff, dk + koff, dh);
          }
        }
      }
    }
  });
}

Var mse_const(const Var& x, std::span<const double> target) {
  if (target.size() != x.size()) throw ShapeError("mse_const: target size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x.data()[i] - target[i];
    acc += d * d;
  }
  const double inv = 1.0 / static_cast<double>(x.size());
  std::vector<double> tg(target.begin(), target.end());
  return make_result({1}, {acc * inv}, {x}, [inv, tg = std::move(tg)](Node& n) {
    Node& p = parent(n, 0);
    double* g = p.grad_data();
    const double go = n.grad[0] * 2.0 * inv;
    for (std::size_t i = 0; i < tg.size(); ++i) g[i] += go * (p.value[i] - tg[i]);
  });
}

}  // namespace lcad::nn
