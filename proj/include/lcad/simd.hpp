#pragma once

#include <cstddef>
#include <string_view>

// Dense double-precision kernels used by the tensor engine. Every kernel has
// a portable scalar reference in `scalar::` and an AVX2/FMA variant in
// `avx2::`; the unqualified entry points dispatch at runtime on CPU support.
// Setting LCAD_SIMD=scalar in the environment pins the reference path.

namespace lcad::simd {

enum class Isa { kScalar, kAvx2 };

/// C = beta*C + op(A) * op(B), row-major. op(A) is M x K, op(B) is K x N.
/// With trans_a, A is stored K x M; with trans_b, B is stored N x K.
struct GemmShape {
  bool trans_a = false;
  bool trans_b = false;
  int m = 0, n = 0, k = 0;
  int lda = 0, ldb = 0, ldc = 0;
};

using GemmFn = void (*)(const GemmShape&, const double* a, const double* b, double beta,
                        double* c);
using DotFn = double (*)(const double* x, const double* y, std::size_t n);
using AxpyFn = void (*)(double alpha, const double* x, double* y, std::size_t n);

namespace scalar {
void gemm(const GemmShape& s, const double* a, const double* b, double beta, double* c);
double dot(const double* x, const double* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace scalar

namespace avx2 {
void gemm(const GemmShape& s, const double* a, const double* b, double beta, double* c);
double dot(const double* x, const double* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace avx2

bool cpu_has_avx2();
Isa active_isa();
/// Overrides the dispatch choice. Requesting kAvx2 on a CPU without it is
/// ignored and the scalar path stays active.
void set_isa(Isa isa);
std::string_view isa_name(Isa isa);

void gemm(const GemmShape& s, const double* a, const double* b, double beta, double* c);
double dot(const double* x, const double* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);

}  // namespace lcad::simd
