#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "grela/tensor.hpp"

namespace grela::linalg {

// Singular values of a row-major rows x cols matrix, descending. One-sided
// (Hestenes) Jacobi: columns are rotated pairwise until mutually orthogonal,
// and the singular values are the final column norms. Cost per sweep is
// O(rows * cols^2) after orienting so that cols <= rows.
std::vector<double> singular_values(std::span<const double> a, std::size_t rows, std::size_t cols);
std::vector<double> singular_values(const Tensor& matrix);

// Count of singular values above tol. The default tolerance is
// max(rows, cols) * sigma_max * machine epsilon.
struct RankResult {
  std::size_t rank = 0;
  double tolerance = 0.0;
  std::vector<double> singular_values;
};
RankResult numerical_rank(std::span<const double> a, std::size_t rows, std::size_t cols,
                          double tolerance = -1.0);
RankResult numerical_rank(const Tensor& matrix, double tolerance = -1.0);

}  // namespace grela::linalg
