#include <cstdlib>
#include <cstring>

#include "lcad/simd.hpp"

namespace lcad::simd {
namespace {

struct Table {
  Isa isa;
  GemmFn gemm;
  DotFn dot;
  AxpyFn axpy;
};

Table make_table(Isa isa) {
  if (isa == Isa::kAvx2) return {Isa::kAvx2, &avx2::gemm, &avx2::dot, &avx2::axpy};
  return {Isa::kScalar, &scalar::gemm, &scalar::dot, &scalar::axpy};
}

Table initial_table() {
  const char* env = std::getenv("LCAD_SIMD");
  if (env != nullptr && std::strcmp(env, "scalar") == 0) return make_table(Isa::kScalar);
  return make_table(cpu_has_avx2() ? Isa::kAvx2 : Isa::kScalar);
}

Table& table() {
  static Table t = initial_table();
  return t;
}

}  // namespace

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa active_isa() { return table().isa; }

void set_isa(Isa isa) {
  if (isa == Isa::kAvx2 && !cpu_has_avx2()) isa = Isa::kScalar;
  table() = make_table(isa);
}

std::string_view isa_name(Isa isa) { return isa == Isa::kAvx2 ? "avx2" : "scalar"; }

void gemm(const GemmShape& s, const double* a, const double* b, double beta, double* c) {
  table().gemm(s, a, b, beta, c);
}
double dot(const double* x, const double* y, std::size_t n) { return table().dot(x, y, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) {
  table().axpy(alpha, x, y, n);
}

}  // namespace lcad::simd
