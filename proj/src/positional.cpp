#include "grela/positional.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "grela/error.hpp"
#include "grela/ops.hpp"
#include "grela/tape.hpp"

namespace grela::positional {

RopeTable::RopeTable(std::size_t max_len, std::size_t dim, double base)
    : RopeTable(max_len, [&] {
        if (dim == 0 || dim % 2 != 0)
          throw ContractError("RopeTable: dimension must be even and positive, got " + std::to_string(dim));
        std::vector<double> th(dim / 2);
        for (std::size_t t = 0; t < th.size(); ++t)
          th[t] = std::pow(base, -2.0 * static_cast<double>(t) / static_cast<double>(dim));
        return th;
      }()) {}

RopeTable RopeTable::from_thetas(std::size_t max_len, std::vector<double> thetas) {
  if (thetas.empty()) throw ContractError("RopeTable: need at least one frequency");
  return RopeTable(max_len, std::move(thetas));
}

RopeTable::RopeTable(std::size_t max_len, std::vector<double> thetas)
    : max_len_(max_len), thetas_(std::move(thetas)) {
  if (max_len_ == 0) throw ContractError("RopeTable: max_len must be positive");
  const std::size_t p = thetas_.size();
  cos_.resize(max_len_ * p);
  sin_.resize(max_len_ * p);
  for (std::size_t m = 0; m < max_len_; ++m)
    for (std::size_t t = 0; t < p; ++t) {
      const double a = static_cast<double>(m) * thetas_[t];
      cos_[m * p + t] = std::cos(a);
      sin_[m * p + t] = std::sin(a);
    }
}

double RopeTable::angle(std::size_t position, std::size_t t) const {
  return static_cast<double>(position) * thetas_.at(t);
}

Tensor rope_apply(const Tensor& x, const RopeTable& table, std::size_t position_offset) {
  if (x.rank() < 2) throw DimensionError("rope_apply: expected [..., N, d], got " + shape_string(x.shape()));
  const std::size_t d = x.dim(-1), n = x.dim(-2);
  if (d % 2 != 0) throw ContractError("rope_apply: last extent must be even for pairing, got " + std::to_string(d));
  if (d != table.dim())
    throw DimensionError("rope_apply: last extent " + std::to_string(d) + " != table dim " +
                         std::to_string(table.dim()));
  if (n + position_offset > table.max_len())
    throw BoundsError("rope_apply: positions up to " + std::to_string(n + position_offset) +
                      " exceed table length " + std::to_string(table.max_len()));
  const std::size_t slabs = x.size() / (n * d);
  const std::size_t pairs = d / 2;

  Tensor out(x.shape(), x.data());
  for (std::size_t s = 0; s < slabs; ++s)
    for (std::size_t m = 0; m < n; ++m)
      rotate_pairs(table, m + position_offset, 0, pairs, out.ptr() + (s * n + m) * d);

  if (Tape::active() != nullptr && x.requires_grad()) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* oi = out.impl().get();
    out.set_requires_grad(true);
    Tape::active()->record("rope_apply", {x.impl()}, out.impl(), [=, &table] {
      xi->ensure_grad();
      const double* go = oi->grad.data();
      double* gx = xi->grad.data();
      // The transpose of a rotation is the rotation by the negated angle.
      for (std::size_t s = 0; s < slabs; ++s)
        for (std::size_t m = 0; m < n; ++m) {
          const std::size_t row = (s * n + m) * d;
          const double* c = table.cos_row(m + position_offset);
          const double* sn = table.sin_row(m + position_offset);
          for (std::size_t t = 0; t < pairs; ++t) {
            const double ga = go[row + 2 * t], gb = go[row + 2 * t + 1];
            gx[row + 2 * t] += ga * c[t] + gb * sn[t];
            gx[row + 2 * t + 1] += -ga * sn[t] + gb * c[t];
          }
        }
    });
  }
  return out;
}

std::vector<double> rope_apply_complex(std::span<const double> x, std::size_t n, std::size_t d,
                                       const RopeTable& table, std::size_t position_offset) {
  if (d % 2 != 0) throw ContractError("rope_apply_complex: odd feature extent");
  if (x.size() % (n * d) != 0) throw DimensionError("rope_apply_complex: data does not tile [N, d]");
  if (n + position_offset > table.max_len()) throw BoundsError("rope_apply_complex: positions exceed table");
  std::vector<double> out(x.size());
  const std::size_t slabs = x.size() / (n * d);
  for (std::size_t s = 0; s < slabs; ++s)
    for (std::size_t m = 0; m < n; ++m)
      for (std::size_t t = 0; t < d / 2; ++t) {
        const std::size_t k = (s * n + m) * d + 2 * t;
        const std::complex<double> z(x[k], x[k + 1]);
        const std::complex<double> r = std::polar(1.0, table.angle(m + position_offset, t));
        const std::complex<double> w = z * r;
        out[k] = w.real();
        out[k + 1] = w.imag();
      }
  return out;
}

double ape_encode(std::size_t position, std::size_t dim_index, std::size_t model_dim) {
  if (dim_index >= model_dim)
    throw BoundsError("ape_encode: dim index " + std::to_string(dim_index) + " >= " + std::to_string(model_dim));
  const double t = static_cast<double>(dim_index / 2);
  const double half = static_cast<double>(model_dim) / 2.0;
  const double arg = static_cast<double>(position) / std::pow(10000.0, 2.0 * t / half);
  return dim_index % 2 == 0 ? std::sin(arg) : std::cos(arg);
}

Tensor ape_table(std::size_t max_len, std::size_t model_dim) {
  Tensor t(Shape{max_len, model_dim});
  for (std::size_t p = 0; p < max_len; ++p)
    for (std::size_t i = 0; i < model_dim; ++i) t[p * model_dim + i] = ape_encode(p, i, model_dim);
  return t;
}

Tensor ape_add(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("ape_add: expected [..., N, D]");
  return ops::add(x, ape_table(x.dim(-2), x.dim(-1)));
}

LearnablePositionTable::LearnablePositionTable(std::size_t max_len, std::size_t model_dim)
    : weights(Shape{max_len, model_dim}) {
  weights.set_requires_grad(true);
}

LearnablePositionTable LearnablePositionTable::random(std::size_t max_len, std::size_t model_dim,
                                                      double std, Rng& rng) {
  LearnablePositionTable t(max_len, model_dim);
  for (double& v : t.weights.data()) v = rng.truncated_normal(std);
  return t;
}

Tensor lpe_add(const Tensor& x, const LearnablePositionTable& table) {
  if (x.rank() < 2) throw DimensionError("lpe_add: expected [N, D] or [B, N, D]");
  const std::size_t n = x.dim(-2);
  if (n > table.max_len())
    throw BoundsError("lpe_add: sequence of " + std::to_string(n) + " exceeds table of " +
                      std::to_string(table.max_len()));
  if (x.dim(-1) != table.weights.dim(1))
    throw DimensionError("lpe_add: feature extent mismatch " + shape_string(x.shape()) + " vs " +
                         shape_string(table.weights.shape()));
  std::vector<std::int32_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return ops::add(x, ops::embedding(table.weights, rows, Shape{n}));
}

}  // namespace grela::positional
