#include "grela/ops.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>

#include "grela/error.hpp"
#include "grela/kernels.hpp"
#include "grela/tape.hpp"

namespace grela::ops {
namespace {

using kernels::Trans;

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs)
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  return false;
}

void record(const char* name, std::initializer_list<const Tensor*> inputs, Tensor& out,
            std::function<void()> rule) {
  std::vector<std::shared_ptr<TensorImpl>> in;
  for (const Tensor* t : inputs)
    if (t != nullptr && t->defined()) in.push_back(t->impl());
  out.set_requires_grad(true);
  Tape::active()->record(name, std::move(in), out.impl(), std::move(rule));
}

// Gradient buffer of an input, or null when the input is not differentiable.
double* grad_of(TensorImpl* t) {
  if (!t->requires_grad) return nullptr;
  t->ensure_grad();
  return t->grad.data();
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (is_suffix(b.shape(), a.shape())) return a.shape();
  if (is_suffix(a.shape(), b.shape())) return b.shape();
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(a.shape()) +
                       " with " + shape_string(b.shape()) +
                       " (only trailing-axis alignment is supported)");
}

template <class Fwd, class Bwd>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  Tensor out(broadcast_shape(a, b, name));
  const std::size_t n = out.size(), pa = a.size(), pb = b.size();
  const double* x = a.ptr();
  const double* y = b.ptr();
  double* o = out.ptr();
  for (std::size_t i = 0; i < n; ++i) o[i] = fwd(x[i % pa], y[i % pb]);
  if (needs_grad({&a, &b})) {
    TensorImpl* ai = a.impl().get();
    TensorImpl* bi = b.impl().get();
    TensorImpl* oi = out.impl().get();
    record(name, {&a, &b}, out, [=] {
      double* ga = grad_of(ai);
      double* gb = grad_of(bi);
      const double* go = oi->grad.data();
      const double* xa = ai->data.data();
      const double* xb = bi->data.data();
      for (std::size_t i = 0; i < n; ++i) {
        double da = 0.0, db = 0.0;
        bwd(xa[i % pa], xb[i % pb], go[i], da, db);
        if (ga) ga[i % pa] += da;
        if (gb) gb[i % pb] += db;
      }
    });
  }
  return out;
}

// f gives y from x; df gives dy/dx from (x, y).
template <class F, class DF>
Tensor unary(const char* name, const Tensor& x, F f, DF df) {
  Tensor out(x.shape());
  const std::size_t n = x.size();
  const double* xv = x.ptr();
  double* o = out.ptr();
  for (std::size_t i = 0; i < n; ++i) o[i] = f(xv[i]);
  if (needs_grad({&x})) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* oi = out.impl().get();
    record(name, {&x}, out, [=] {
      double* gx = grad_of(xi);
      if (!gx) return;
      const double* go = oi->grad.data();
      for (std::size_t i = 0; i < n; ++i) gx[i] += go[i] * df(xi->data[i], oi->data[i]);
    });
  }
  return out;
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "elu") return Activation::ELU;
  if (name == "silu") return Activation::SiLU;
  if (name == "gelu") return Activation::GELU;
  if (name == "relu") return Activation::ReLU;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw ContractError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation a) noexcept {
  switch (a) {
    case Activation::ELU: return "elu";
    case Activation::SiLU: return "silu";
    case Activation::GELU: return "gelu";
    case Activation::ReLU: return "relu";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "?";
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary("add", a, b, [](double x, double y) { return x + y; },
                [](double, double, double g, double& da, double& db) { da = g; db = g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; },
                [](double, double, double g, double& da, double& db) { da = g; db = -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; },
                [](double x, double y, double g, double& da, double& db) {
                  da = g * y;
                  db = g * x;
                });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary("div", a, b, [](double x, double y) { return x / y; },
                [](double x, double y, double g, double& da, double& db) {
                  da = g / y;
                  db = -g * x / (y * y);
                });
}

Tensor neg(const Tensor& a) {
  return unary("neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double x) { return factor * x; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary("add_scalar", a, [value](double x) { return x + value; },
               [](double, double) { return 1.0; });
}

Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b) {
  const bool binary_op = op == Elementwise::Add || op == Elementwise::Sub ||
                         op == Elementwise::Mul || op == Elementwise::Div;
  if (binary_op && !b.defined()) throw ContractError("elementwise: binary op needs two operands");
  switch (op) {
    case Elementwise::Add: return add(a, b);
    case Elementwise::Sub: return sub(a, b);
    case Elementwise::Mul: return mul(a, b);
    case Elementwise::Div: return div(a, b);
    case Elementwise::Exp: return exp(a);
    case Elementwise::Neg: return neg(a);
  }
  throw ContractError("elementwise: unknown op");
}

Tensor elu(const Tensor& x) {
  return unary("elu", x, [](double v) { return v >= 0.0 ? v : std::expm1(v); },
               [](double v, double) { return v >= 0.0 ? 1.0 : std::exp(v); });
}

Tensor silu(const Tensor& x) {
  return unary("silu", x, [](double v) { return v * sigmoid_scalar(v); },
               [](double v, double) {
                 const double s = sigmoid_scalar(v);
                 return s * (1.0 + v * (1.0 - s));
               });
}

Tensor gelu(const Tensor& x) {
  return unary("gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
               [](double v, double) {
                 return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) +
                        v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
               });
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, [](double v) { return sigmoid_scalar(v); },
               [](double, double s) { return s * (1.0 - s); });
}

Tensor activation(Activation kind, const Tensor& x) {
  switch (kind) {
    case Activation::ELU: return elu(x);
    case Activation::SiLU: return silu(x);
    case Activation::GELU: return gelu(x);
    case Activation::ReLU: return relu(x);
    case Activation::Sigmoid: return sigmoid(x);
  }
  throw ContractError("activation: unknown kind");
}

Tensor softmax(const Tensor& x, int axis) {
  const int r = static_cast<int>(x.rank());
  const int ax = axis < 0 ? r + axis : axis;
  if (ax < 0 || ax >= r)
    throw BoundsError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_string(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= x.shape()[i];
  for (int i = ax + 1; i < r; ++i) inner *= x.shape()[i];
  const std::size_t len = x.shape()[ax];

  Tensor out(x.shape());
  const double* xv = x.ptr();
  double* y = out.ptr();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(xv[base + j * inner] - mx);
        y[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) y[base + j * inner] /= total;
    }
  }
  if (needs_grad({&x})) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* oi = out.impl().get();
    record("softmax", {&x}, out, [=] {
      double* gx = grad_of(xi);
      if (!gx) return;
      const double* go = oi->grad.data();
      const double* yv = oi->data.data();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double s = 0.0;
          for (std::size_t j = 0; j < len; ++j) s += go[base + j * inner] * yv[base + j * inner];
          for (std::size_t j = 0; j < len; ++j) {
            const std::size_t k = base + j * inner;
            gx[k] += yv[k] * (go[k] - s);
          }
        }
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (b.rank() != 2 || a.rank() < 1 || a.dim(-1) != b.dim(0))
    throw DimensionError("matmul: inner extents differ for " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  const std::size_t k = b.dim(0), p = b.dim(1), m = a.size() / k;
  Shape shape = a.shape();
  shape.back() = p;
  Tensor out(std::move(shape));
  kernels::gemm(Trans::No, Trans::No, m, p, k, 1.0, a.ptr(), k, b.ptr(), p, 0.0, out.ptr(), p);
  if (needs_grad({&a, &b})) {
    TensorImpl* ai = a.impl().get();
    TensorImpl* bi = b.impl().get();
    TensorImpl* oi = out.impl().get();
    record("matmul", {&a, &b}, out, [=] {
      const double* go = oi->grad.data();
      if (double* ga = grad_of(ai))
        kernels::gemm(Trans::No, Trans::Yes, m, k, p, 1.0, go, p, bi->data.data(), p, 1.0, ga, k);
      if (double* gb = grad_of(bi))
        kernels::gemm(Trans::Yes, Trans::No, k, p, m, 1.0, ai->data.data(), k, go, p, 1.0, gb, p);
    });
  }
  return out;
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  if (b.rank() != 2 || a.rank() < 1 || a.dim(-1) != b.dim(1))
    throw DimensionError("matmul_transposed: inner extents differ for " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()) + "^T");
  const std::size_t k = b.dim(1), p = b.dim(0), m = a.size() / k;
  Shape shape = a.shape();
  shape.back() = p;
  Tensor out(std::move(shape));
  kernels::gemm(Trans::No, Trans::Yes, m, p, k, 1.0, a.ptr(), k, b.ptr(), k, 0.0, out.ptr(), p);
  if (needs_grad({&a, &b})) {
    TensorImpl* ai = a.impl().get();
    TensorImpl* bi = b.impl().get();
    TensorImpl* oi = out.impl().get();
    record("matmul_transposed", {&a, &b}, out, [=] {
      const double* go = oi->grad.data();
      if (double* ga = grad_of(ai))
        kernels::gemm(Trans::No, Trans::No, m, k, p, 1.0, go, p, bi->data.data(), k, 1.0, ga, k);
      if (double* gb = grad_of(bi))
        kernels::gemm(Trans::Yes, Trans::No, p, k, m, 1.0, go, p, ai->data.data(), k, 1.0, gb, k);
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.dim(-1);
  if (gain.size() != d || bias.size() != d)
    throw DimensionError("layer_norm: affine parameters " + shape_string(gain.shape()) + "/" +
                         shape_string(bias.shape()) + " do not match last axis of " +
                         shape_string(x.shape()));
  const std::size_t rows = x.size() / d;
  Tensor out(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  const double* xv = x.ptr();
  const double* g = gain.ptr();
  const double* bv = bias.ptr();
  double* y = out.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      y[r * d + j] = h * g[j] + bv[j];
    }
  }
  if (needs_grad({&x, &gain, &bias})) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* gi = gain.impl().get();
    TensorImpl* bi = bias.impl().get();
    TensorImpl* oi = out.impl().get();
    record("layer_norm", {&x, &gain, &bias}, out, [=] {
      const double* go = oi->grad.data();
      const double* gv = gi->data.data();
      double* gx = grad_of(xi);
      double* gg = grad_of(gi);
      double* gb = grad_of(bi);
      std::vector<double> dxhat(d);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* h = xhat->data() + r * d;
        const double* dy = go + r * d;
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          if (gg) gg[j] += dy[j] * h[j];
          if (gb) gb[j] += dy[j];
          dxhat[j] = dy[j] * gv[j];
          m1 += dxhat[j];
          m2 += dxhat[j] * h[j];
        }
        if (!gx) continue;
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j)
          gx[r * d + j] += (*rstd)[r] * (dxhat[j] - m1 - h[j] * m2);
      }
    });
  }
  return out;
}

namespace {

Tensor apply_mask(const char* name, const Tensor& x, std::shared_ptr<std::vector<double>> mask,
                  std::size_t period) {
  // mask entry k covers elements [k * period, (k + 1) * period)
  Tensor out(x.shape());
  const double* xv = x.ptr();
  double* y = out.ptr();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = xv[i] * (*mask)[i / period];
  if (needs_grad({&x})) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* oi = out.impl().get();
    const std::size_t n = x.size();
    record(name, {&x}, out, [=] {
      double* gx = grad_of(xi);
      if (!gx) return;
      const double* go = oi->grad.data();
      for (std::size_t i = 0; i < n; ++i) gx[i] += go[i] * (*mask)[i / period];
    });
  }
  return out;
}

void check_rate(double rate, const char* op) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw ContractError(std::string(op) + ": rate must lie in [0, 1), got " + std::to_string(rate));
}

}  // namespace

Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
  check_rate(rate, "dropout");
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  for (double& m : *mask) m = rng.uniform() >= rate ? keep_scale : 0.0;
  return apply_mask("dropout", x, std::move(mask), 1);
}

Tensor drop_path(const Tensor& x, double rate, bool training, Rng& rng) {
  check_rate(rate, "drop_path");
  if (!training || rate == 0.0) return x;
  const std::size_t batch = x.dim(0);
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(batch);
  for (double& m : *mask) m = rng.uniform() >= rate ? keep_scale : 0.0;
  return apply_mask("drop_path", x, std::move(mask), x.size() / batch);
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor out = Tensor::scalar(total);
  if (needs_grad({&x})) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* oi = out.impl().get();
    record("sum", {&x}, out, [=] {
      double* gx = grad_of(xi);
      if (!gx) return;
      const double g = oi->grad[0];
      for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size())
    throw DimensionError("reshape: " + shape_string(x.shape()) + " has " + std::to_string(x.size()) +
                         " elements, target " + shape_string(shape) + " does not");
  Tensor out(std::move(shape), x.data());
  if (needs_grad({&x})) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* oi = out.impl().get();
    record("reshape", {&x}, out, [=] {
      double* gx = grad_of(xi);
      if (!gx) return;
      for (std::size_t i = 0; i < oi->grad.size(); ++i) gx[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids, Shape prefix) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be 2-D, got " + shape_string(table.shape()));
  if (shape_size(prefix) != ids.size())
    throw DimensionError("embedding: prefix " + shape_string(prefix) + " does not cover " +
                         std::to_string(ids.size()) + " ids");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  for (std::int32_t id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw BoundsError("embedding: id " + std::to_string(id) + " outside vocabulary of " +
                        std::to_string(vocab));
  Shape shape = std::move(prefix);
  shape.push_back(d);
  Tensor out(std::move(shape));
  for (std::size_t r = 0; r < ids.size(); ++r)
    std::copy_n(table.ptr() + static_cast<std::size_t>(ids[r]) * d, d, out.ptr() + r * d);
  if (needs_grad({&table})) {
    TensorImpl* ti = table.impl().get();
    TensorImpl* oi = out.impl().get();
    auto idx = std::make_shared<std::vector<std::int32_t>>(ids.begin(), ids.end());
    record("embedding", {&table}, out, [=] {
      double* gt = grad_of(ti);
      if (!gt) return;
      for (std::size_t r = 0; r < idx->size(); ++r)
        kernels::axpy(1.0, oi->grad.data() + r * d, gt + static_cast<std::size_t>((*idx)[r]) * d, d);
    });
  }
  return out;
}

Tensor take_position(const Tensor& x, std::size_t position) {
  if (x.rank() != 3) throw DimensionError("take_position: expected [B, N, D], got " + shape_string(x.shape()));
  const std::size_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
  if (position >= n) throw BoundsError("take_position: position " + std::to_string(position) + " >= " + std::to_string(n));
  Tensor out(Shape{b, d});
  for (std::size_t i = 0; i < b; ++i)
    std::copy_n(x.ptr() + (i * n + position) * d, d, out.ptr() + i * d);
  if (needs_grad({&x})) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* oi = out.impl().get();
    record("take_position", {&x}, out, [=] {
      double* gx = grad_of(xi);
      if (!gx) return;
      for (std::size_t i = 0; i < b; ++i)
        kernels::axpy(1.0, oi->grad.data() + i * d, gx + (i * n + position) * d, d);
    });
  }
  return out;
}

Tensor row_scale(const Tensor& x, std::span<const double> factors) {
  const std::size_t d = x.dim(-1);
  if (factors.size() * d != x.size())
    throw DimensionError("row_scale: " + std::to_string(factors.size()) + " factors for " +
                         shape_string(x.shape()));
  return apply_mask("row_scale", x, std::make_shared<std::vector<double>>(factors.begin(), factors.end()), d);
}

}  // namespace grela::ops
