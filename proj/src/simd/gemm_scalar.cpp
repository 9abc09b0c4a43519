#include "lcad/simd.hpp"

namespace lcad::simd::scalar {

void gemm(const GemmShape& s, const double* a, const double* b, double beta, double* c) {
  for (int i = 0; i < s.m; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * s.ldc;
    if (beta == 0.0) {
      for (int j = 0; j < s.n; ++j) crow[j] = 0.0;
    } else if (beta != 1.0) {
      for (int j = 0; j < s.n; ++j) crow[j] *= beta;
    }
    for (int p = 0; p < s.k; ++p) {
      const double av = s.trans_a ? a[static_cast<std::size_t>(p) * s.lda + i]
                                  : a[static_cast<std::size_t>(i) * s.lda + p];
      if (av == 0.0) continue;
      if (s.trans_b) {
        for (int j = 0; j < s.n; ++j) crow[j] += av * b[static_cast<std::size_t>(j) * s.ldb + p];
      } else {
        const double* brow = b + static_cast<std::size_t>(p) * s.ldb;
        for (int j = 0; j < s.n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

double dot(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace lcad::simd::scalar
