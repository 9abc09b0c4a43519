// AVX2/FMA GEMM. Operands are packed into MR x KC and KC x NR panels so the
// 4x8 micro-kernel streams both from contiguous memory; edges are handled by
// zero-padding the packed panels and writing back through a scratch tile.

#include <immintrin.h>

#include <algorithm>
#include <vector>

#include "lcad/simd.hpp"

namespace lcad::simd::avx2 {
namespace {

constexpr int kMr = 4;
constexpr int kNr = 8;
constexpr int kKc = 256;
constexpr int kMc = 64;
constexpr int kNc = 1024;

inline double load_a(const GemmShape& s, const double* a, int i, int p) {
  return s.trans_a ? a[static_cast<std::size_t>(p) * s.lda + i]
                   : a[static_cast<std::size_t>(i) * s.lda + p];
}

inline double load_b(const GemmShape& s, const double* b, int p, int j) {
  return s.trans_b ? b[static_cast<std::size_t>(j) * s.ldb + p]
                   : b[static_cast<std::size_t>(p) * s.ldb + j];
}

// Packs rows [i0, i0+mc) x cols [p0, p0+kc) of op(A) into MR-row panels.
void pack_a(const GemmShape& s, const double* a, int i0, int mc, int p0, int kc, double* dst) {
  for (int ir = 0; ir < mc; ir += kMr) {
    const int rows = std::min(kMr, mc - ir);
    for (int p = 0; p < kc; ++p) {
      for (int r = 0; r < kMr; ++r) {
        *dst++ = r < rows ? load_a(s, a, i0 + ir + r, p0 + p) : 0.0;
      }
    }
  }
}

void pack_b(const GemmShape& s, const double* b, int p0, int kc, int j0, int nc, double* dst) {
  for (int jr = 0; jr < nc; jr += kNr) {
    const int cols = std::min(kNr, nc - jr);
    if (!s.trans_b && cols == kNr) {
      for (int p = 0; p < kc; ++p) {
        const double* src = b + static_cast<std::size_t>(p0 + p) * s.ldb + j0 + jr;
        _mm256_storeu_pd(dst, _mm256_loadu_pd(src));
        _mm256_storeu_pd(dst + 4, _mm256_loadu_pd(src + 4));
        dst += kNr;
      }
      continue;
    }
    for (int p = 0; p < kc; ++p) {
      for (int c = 0; c < kNr; ++c) {
        *dst++ = c < cols ? load_b(s, b, p0 + p, j0 + jr + c) : 0.0;
      }
    }
  }
}

// acc[4][8] = Apanel(4 x kc) * Bpanel(kc x 8)
inline void micro_kernel(int kc, const double* ap, const double* bp, double* out, int ldo) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  for (int p = 0; p < kc; ++p) {
    const __m256d b0 = _mm256_loadu_pd(bp);
    const __m256d b1 = _mm256_loadu_pd(bp + 4);
    __m256d a = _mm256_broadcast_sd(ap);
    c00 = _mm256_fmadd_pd(a, b0, c00);
    c01 = _mm256_fmadd_pd(a, b1, c01);
    a = _mm256_broadcast_sd(ap + 1);
    c10 = _mm256_fmadd_pd(a, b0, c10);
    c11 = _mm256_fmadd_pd(a, b1, c11);
    a = _mm256_broadcast_sd(ap + 2);
    c20 = _mm256_fmadd_pd(a, b0, c20);
    c21 = _mm256_fmadd_pd(a, b1, c21);
    a = _mm256_broadcast_sd(ap + 3);
    c30 = _mm256_fmadd_pd(a, b0, c30);
    c31 = _mm256_fmadd_pd(a, b1, c31);
    ap += kMr;
    bp += kNr;
  }
  _mm256_storeu_pd(out, c00);
  _mm256_storeu_pd(out + 4, c01);
  _mm256_storeu_pd(out + ldo, c10);
  _mm256_storeu_pd(out + ldo + 4, c11);
  _mm256_storeu_pd(out + 2 * ldo, c20);
  _mm256_storeu_pd(out + 2 * ldo + 4, c21);
  _mm256_storeu_pd(out + 3 * ldo, c30);
  _mm256_storeu_pd(out + 3 * ldo + 4, c31);
}

void scale_c(const GemmShape& s, double beta, double* c) {
  for (int i = 0; i < s.m; ++i) {
    double* row = c + static_cast<std::size_t>(i) * s.ldc;
    if (beta == 0.0) {
      std::fill(row, row + s.n, 0.0);
    } else if (beta != 1.0) {
      for (int j = 0; j < s.n; ++j) row[j] *= beta;
    }
  }
}

}  // namespace

void gemm(const GemmShape& s, const double* a, const double* b, double beta, double* c) {
  if (s.m <= 0 || s.n <= 0) return;
  scale_c(s, beta, c);
  if (s.k <= 0) return;

  thread_local std::vector<double> apack, bpack;
  apack.resize(static_cast<std::size_t>(kMc + kMr) * kKc);
  bpack.resize(static_cast<std::size_t>(kNc + kNr) * kKc);
  alignas(32) double tile[kMr * kNr];

  for (int j0 = 0; j0 < s.n; j0 += kNc) {
    const int nc = std::min(kNc, s.n - j0);
    for (int p0 = 0; p0 < s.k; p0 += kKc) {
      const int kc = std::min(kKc, s.k - p0);
      pack_b(s, b, p0, kc, j0, nc, bpack.data());
      for (int i0 = 0; i0 < s.m; i0 += kMc) {
        const int mc = std::min(kMc, s.m - i0);
        pack_a(s, a, i0, mc, p0, kc, apack.data());
        for (int jr = 0; jr < nc; jr += kNr) {
          const int cols = std::min(kNr, nc - jr);
          const double* bp = bpack.data() + static_cast<std::size_t>(jr / kNr) * kc * kNr;
          for (int ir = 0; ir < mc; ir += kMr) {
            const int rows = std::min(kMr, mc - ir);
            const double* ap = apack.data() + static_cast<std::size_t>(ir / kMr) * kc * kMr;
            micro_kernel(kc, ap, bp, tile, kNr);
            for (int r = 0; r < rows; ++r) {
              double* crow = c + static_cast<std::size_t>(i0 + ir + r) * s.ldc + j0 + jr;
              const double* trow = tile + r * kNr;
              if (cols == kNr) {
                _mm256_storeu_pd(crow, _mm256_add_pd(_mm256_loadu_pd(crow), _mm256_load_pd(trow)));
                _mm256_storeu_pd(crow + 4, _mm256_add_pd(_mm256_loadu_pd(crow + 4),
                                                         _mm256_load_pd(trow + 4)));
              } else {
                for (int cc = 0; cc < cols; ++cc) crow[cc] += trow[cc];
              }
            }
          }
        }
      }
    }
  }
}

double dot(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, _mm256_add_pd(acc0, acc1));
  double acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace lcad::simd::avx2
