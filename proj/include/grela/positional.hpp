#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "grela/rng.hpp"
#include "grela/tensor.hpp"

namespace grela::positional {

// Rotary table. Feature pairs are adjacent, (2t, 2t+1), read as the real and
// imaginary part of one complex coordinate. Frequencies are 0-based:
// theta_t = base^(-2t / dim) for t in [0, dim/2). Positions at or beyond
// max_len are rejected, never extrapolated.
class RopeTable {
 public:
  RopeTable(std::size_t max_len, std::size_t dim, double base = 10000.0);
  // Explicit frequencies (dim = 2 * thetas.size()); used for ablations with
  // zeroed angles and for analytic tests.
  static RopeTable from_thetas(std::size_t max_len, std::vector<double> thetas);

  std::size_t max_len() const noexcept { return max_len_; }
  std::size_t dim() const noexcept { return 2 * thetas_.size(); }
  std::size_t pairs() const noexcept { return thetas_.size(); }
  double theta(std::size_t t) const { return thetas_.at(t); }
  double angle(std::size_t position, std::size_t t) const;

  // cos/sin of position * theta_t, one row of pairs() entries per position.
  const double* cos_row(std::size_t position) const { return cos_.data() + position * pairs(); }
  const double* sin_row(std::size_t position) const { return sin_.data() + position * pairs(); }

 private:
  RopeTable(std::size_t max_len, std::vector<double> thetas);

  std::size_t max_len_;
  std::vector<double> thetas_;
  std::vector<double> cos_;
  std::vector<double> sin_;
};

// Rotates `pairs` consecutive pairs starting at pair index first_pair of the
// table, in place, for one position.
template <class T>
void rotate_pairs(const RopeTable& table, std::size_t position, std::size_t first_pair,
                  std::size_t pairs, T* x) {
  const double* c = table.cos_row(position) + first_pair;
  const double* s = table.sin_row(position) + first_pair;
  for (std::size_t t = 0; t < pairs; ++t) {
    const T a = x[2 * t], b = x[2 * t + 1];
    const T ct = static_cast<T>(c[t]), st = static_cast<T>(s[t]);
    x[2 * t] = a * ct - b * st;
    x[2 * t + 1] = a * st + b * ct;
  }
}

// R(x): x is [..., N, d] with d == table.dim(); row m of every [N, d] slab is
// rotated by angles (m + position_offset) * theta_t. Differentiable.
Tensor rope_apply(const Tensor& x, const RopeTable& table, std::size_t position_offset = 0);

// Same operator through complex arithmetic, C^-1(C(x) * R). Independent second
// route used to cross-check rope_apply.
std::vector<double> rope_apply_complex(std::span<const double> x, std::size_t n, std::size_t d,
                                       const RopeTable& table, std::size_t position_offset = 0);

// Sinusoidal absolute encoding:
//   even slot 2t:   sin(p / 10000^(2t / (D/2)))
//   odd slot 2t+1:  cos(p / 10000^(2t / (D/2)))
double ape_encode(std::size_t position, std::size_t dim_index, std::size_t model_dim);
Tensor ape_table(std::size_t max_len, std::size_t model_dim);
// x [..., N, D] + APE rows 0..N-1.
Tensor ape_add(const Tensor& x);

struct LearnablePositionTable {
  Tensor weights;  // [max_len, D], participates in the tape

  LearnablePositionTable(std::size_t max_len, std::size_t model_dim);
  static LearnablePositionTable random(std::size_t max_len, std::size_t model_dim, double std, Rng& rng);
  std::size_t max_len() const { return weights.dim(0); }
};

// x [N, D] or [B, N, D]: row m gets p_m added.
Tensor lpe_add(const Tensor& x, const LearnablePositionTable& table);

}  // namespace grela::positional
