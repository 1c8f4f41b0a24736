#include "grela/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "grela/error.hpp"
#include "grela/kernels.hpp"

namespace grela::linalg {

std::vector<double> singular_values(std::span<const double> a, std::size_t rows, std::size_t cols) {
  if (a.size() != rows * cols) throw DimensionError("singular_values: data does not match shape");
  if (rows == 0 || cols == 0) return {};

  // Store columns contiguously; transpose first when wide so that the number
  // of columns (the Jacobi pair count driver) is the smaller extent.
  const bool wide = cols > rows;
  const std::size_t m = wide ? cols : rows;  // column length
  const std::size_t n = wide ? rows : cols;  // column count
  std::vector<double> u(m * n);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = a[r * cols + c];
      if (wide) u[r * m + c] = v;  // column r of A^T is row r of A
      else u[c * m + r] = v;
    }

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) norms[j] = kernels::dot(&u[j * m], &u[j * m], m);

  constexpr double eps = std::numeric_limits<double>::epsilon();
  constexpr int kMaxSweeps = 60;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double* up = &u[p * m];
        double* uq = &u[q * m];
        const double alpha = norms[p];
        const double beta = norms[q];
        const double gamma = kernels::dot(up, uq, m);
        if (gamma == 0.0 || std::fabs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double x = up[i];
          const double y = uq[i];
          up[i] = c * x - s * y;
          uq[i] = s * x + c * y;
        }
        norms[p] = kernels::dot(up, up, m);
        norms[q] = kernels::dot(uq, uq, m);
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sv(n);
  for (std::size_t j = 0; j < n; ++j) sv[j] = std::sqrt(kernels::dot(&u[j * m], &u[j * m], m));
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

std::vector<double> singular_values(const Tensor& matrix) {
  if (matrix.rank() != 2) throw DimensionError("singular_values: expected a matrix, got " + shape_string(matrix.shape()));
  return singular_values(matrix.data(), matrix.dim(0), matrix.dim(1));
}

RankResult numerical_rank(std::span<const double> a, std::size_t rows, std::size_t cols, double tolerance) {
  RankResult result;
  result.singular_values = singular_values(a, rows, cols);
  const double smax = result.singular_values.empty() ? 0.0 : result.singular_values.front();
  result.tolerance = tolerance >= 0.0
                         ? tolerance
                         : static_cast<double>(std::max(rows, cols)) * smax *
                               std::numeric_limits<double>::epsilon();
  result.rank = static_cast<std::size_t>(
      std::count_if(result.singular_values.begin(), result.singular_values.end(),
                    [&](double s) { return s > result.tolerance; }));
  return result;
}

RankResult numerical_rank(const Tensor& matrix, double tolerance) {
  if (matrix.rank() != 2) throw DimensionError("numerical_rank: expected a matrix, got " + shape_string(matrix.shape()));
  return numerical_rank(matrix.data(), matrix.dim(0), matrix.dim(1), tolerance);
}

}  // namespace grela::linalg
