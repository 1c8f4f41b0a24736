#pragma once

#include "grela/kernels.hpp"

namespace grela::kernels {

namespace scalar {
double dot_f64(const double* a, const double* b, std::size_t n);
float dot_f32(const float* a, const float* b, std::size_t n);
void axpy_f64(double alpha, const double* x, double* y, std::size_t n);
void axpy_f32(float alpha, const float* x, float* y, std::size_t n);
void gemm_f64(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
              double alpha, const double* a, std::size_t lda, const double* b,
              std::size_t ldb, double beta, double* c, std::size_t ldc);
void gemm_f32(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
              float alpha, const float* a, std::size_t lda, const float* b,
              std::size_t ldb, float beta, float* c, std::size_t ldc);
}  // namespace scalar

namespace avx2 {
// Null when the AVX2 translation unit was not compiled for this target.
const Table* table() noexcept;
}  // namespace avx2

}  // namespace grela::kernels
