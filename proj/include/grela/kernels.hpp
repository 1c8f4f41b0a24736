#pragma once

// Data-parallel inner loops shared by the tensor ops and the attention
// kernels. Each primitive has a scalar reference implementation and an AVX2
// variant; the variant is picked once at startup from CPUID and can be
// overridden with GRELA_ISA=scalar|avx2 or set_isa().
//
// Matrices are row-major. gemm follows the BLAS contract:
//   C = alpha * op(A) * op(B) + beta * C
// where op(A) is M x K, op(B) is K x N, and lda/ldb/ldc are row strides.
// beta == 0 overwrites C without reading it.

#include <cstddef>
#include <string_view>

namespace grela::kernels {

enum class Isa { Scalar, Avx2 };
enum class Trans { No, Yes };

struct Table {
  Isa isa;
  double (*dot_f64)(const double*, const double*, std::size_t);
  float (*dot_f32)(const float*, const float*, std::size_t);
  void (*axpy_f64)(double, const double*, double*, std::size_t);
  void (*axpy_f32)(float, const float*, float*, std::size_t);
  void (*gemm_f64)(Trans, Trans, std::size_t, std::size_t, std::size_t, double,
                   const double*, std::size_t, const double*, std::size_t, double,
                   double*, std::size_t);
  void (*gemm_f32)(Trans, Trans, std::size_t, std::size_t, std::size_t, float,
                   const float*, std::size_t, const float*, std::size_t, float,
                   float*, std::size_t);
};

bool isa_supported(Isa isa) noexcept;
Isa detect_isa() noexcept;
Isa active_isa() noexcept;
// Throws ContractError when the CPU (or the build) lacks the ISA.
void set_isa(Isa isa);
std::string_view isa_name(Isa isa) noexcept;
Isa parse_isa(std::string_view name);

const Table& table(Isa isa);
const Table& active() noexcept;

inline double dot(const double* a, const double* b, std::size_t n) {
  return active().dot_f64(a, b, n);
}
inline float dot(const float* a, const float* b, std::size_t n) {
  return active().dot_f32(a, b, n);
}
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  active().axpy_f64(alpha, x, y, n);
}
inline void axpy(float alpha, const float* x, float* y, std::size_t n) {
  active().axpy_f32(alpha, x, y, n);
}
inline void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
                 double alpha, const double* a, std::size_t lda, const double* b,
                 std::size_t ldb, double beta, double* c, std::size_t ldc) {
  active().gemm_f64(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
inline void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
                 float alpha, const float* a, std::size_t lda, const float* b,
                 std::size_t ldb, float beta, float* c, std::size_t ldc) {
  active().gemm_f32(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

// RAII override used by the equivalence tests.
class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa) : previous_(active_isa()) { set_isa(isa); }
  ~ScopedIsa() { set_isa(previous_); }
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa previous_;
};

}  // namespace grela::kernels
