#include "grela/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "grela/error.hpp"
#include "grela/kernels.hpp"
#include "grela/memory.hpp"
#include "grela/ops.hpp"
#include "record.hpp"

namespace grela::attention {

using detail::grad_of;
using detail::needs_grad;
using detail::record;

Variant parse_variant(std::string_view name) {
  if (name == "rela") return Variant::RELA;
  if (name == "linear") return Variant::Linear;
  if (name == "dot" || name == "dot_product" || name == "softmax") return Variant::DotProduct;
  throw ContractError("unknown attention variant '" + std::string(name) + "' (expected rela, linear, dot)");
}

std::string_view variant_name(Variant v) noexcept {
  switch (v) {
    case Variant::RELA: return "rela";
    case Variant::Linear: return "linear";
    case Variant::DotProduct: return "dot";
  }
  return "?";
}

void AttentionConfig::validate(std::size_t model_dim_expected) const {
  if (heads == 0 || head_dim == 0) throw ContractError("attention: heads and head_dim must be positive");
  if (heads * head_dim != model_dim_expected)
    throw ContractError("attention: heads * head_dim = " + std::to_string(heads * head_dim) +
                        " != model dim " + std::to_string(model_dim_expected));
  if (!(eps > 0.0)) throw ContractError("attention: eps must be positive");
  if (variant == Variant::RELA && model_dim_expected % 2 != 0)
    throw ContractError("attention: rotary pairing needs an even model dim");
}

namespace {

struct Layout {
  std::size_t batch, n, dim, heads, hd;
};

Layout check_inputs(const char* op, const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                    std::span<const double> key_mask) {
  if (q.rank() != 2 && q.rank() != 3)
    throw DimensionError(std::string(op) + ": expected [N, D] or [B, N, D], got " + shape_string(q.shape()));
  if (k.shape() != q.shape() || v.shape() != q.shape())
    throw DimensionError(std::string(op) + ": shape mismatch q " + shape_string(q.shape()) + ", k " +
                         shape_string(k.shape()) + ", v " + shape_string(v.shape()));
  Layout l{q.rank() == 3 ? q.dim(0) : 1, q.dim(-2), q.dim(-1), heads, 0};
  if (heads == 0 || l.dim % heads != 0)
    throw DimensionError(std::string(op) + ": model dim " + std::to_string(l.dim) + " not divisible into " +
                         std::to_string(heads) + " heads");
  l.hd = l.dim / heads;
  if (!key_mask.empty() && key_mask.size() != l.batch * l.n)
    throw DimensionError(std::string(op) + ": key mask has " + std::to_string(key_mask.size()) +
                         " entries, expected " + std::to_string(l.batch * l.n));
  return l;
}

inline double mask_at(std::span<const double> mask, std::size_t i) { return mask.empty() ? 1.0 : mask[i]; }

}  // namespace

Tensor kernel_phi(const Tensor& x) { return ops::add_scalar(ops::elu(x), 1.0); }

AttentionOutput linear_mix(const Tensor& qn, const Tensor& kn, const Tensor& qd, const Tensor& kd, const Tensor& v,
                           std::size_t heads, bool causal, double f, double eps,
                           std::span<const double> key_mask, bool materialize) {
  const Layout l = check_inputs("linear_mix", qn, kn, v, heads, key_mask);
  if (qd.shape() != qn.shape() || kd.shape() != qn.shape())
    throw DimensionError("linear_mix: denominator features must match " + shape_string(qn.shape()));
  if (materialize && l.batch != 1) throw ContractError("linear_mix: mixing matrix needs a single sequence");
  const std::size_t n = l.n, D = l.dim, d = l.hd;

  AttentionOutput res;
  res.output = Tensor(v.shape());
  auto den = std::make_shared<std::vector<double>>(l.batch * heads * n);
  auto clamped = std::make_shared<std::vector<char>>(den->size(), 0);
  std::vector<double> S(d * d), z(d), num(d);
  auto mask = std::make_shared<std::vector<double>>(key_mask.begin(), key_mask.end());

  for (std::size_t b = 0; b < l.batch; ++b)
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t base = b * n * D + h * d;
      auto add_key = [&](std::size_t j) {
        const double w = mask_at(*mask, b * n + j);
        if (w == 0.0) return;
        const double* knj = kn.ptr() + base + j * D;
        const double* kdj = kd.ptr() + base + j * D;
        const double* vj = v.ptr() + base + j * D;
        for (std::size_t i = 0; i < d; ++i) {
          kernels::axpy(w * knj[i], vj, S.data() + i * d, d);
          z[i] += w * kdj[i];
        }
      };
      std::fill(S.begin(), S.end(), 0.0);
      std::fill(z.begin(), z.end(), 0.0);
      if (!causal)
        for (std::size_t j = 0; j < n; ++j) add_key(j);
      for (std::size_t m = 0; m < n; ++m) {
        if (causal) add_key(m);
        const double* qnm = qn.ptr() + base + m * D;
        const double* qdm = qd.ptr() + base + m * D;
        std::fill(num.begin(), num.end(), 0.0);
        for (std::size_t i = 0; i < d; ++i) kernels::axpy(qnm[i], S.data() + i * d, num.data(), d);
        double dn = f * kernels::dot(qdm, z.data(), d) + eps;
        const std::size_t di = (b * heads + h) * n + m;
        if (!(dn > kDenominatorFloor)) {
          dn = kDenominatorFloor;
          (*clamped)[di] = 1;
          ++res.floor_hits;
        }
        (*den)[di] = dn;
        double* o = res.output.ptr() + base + m * D;
        for (std::size_t j = 0; j < d; ++j) o[j] = f * num[j] / dn;
      }
    }

  if (materialize) {
    res.mixing_matrix = Tensor(Shape{heads, n, n});
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t m = 0; m < n; ++m)
        for (std::size_t j = 0; j < n; ++j) {
          if (causal && j > m) continue;
          const double w = mask_at(*mask, j);
          if (w == 0.0) continue;
          const double s = kernels::dot(qn.ptr() + m * D + h * d, kn.ptr() + j * D + h * d, d);
          res.mixing_matrix[(h * n + m) * n + j] = f * w * s / (*den)[h * n + m];
        }
  }

  if (needs_grad({&qn, &kn, &qd, &kd, &v})) {
    TensorImpl* qni = qn.impl().get();
    TensorImpl* kni = kn.impl().get();
    TensorImpl* qdi = qd.impl().get();
    TensorImpl* kdi = kd.impl().get();
    TensorImpl* vi = v.impl().get();
    TensorImpl* oi = res.output.impl().get();
    const std::size_t batch = l.batch;
    record("linear_mix", {&qn, &kn, &qd, &kd, &v}, res.output, [=] {
      double* gqn = grad_of(qni);
      double* gkn = grad_of(kni);
      double* gqd = grad_of(qdi);
      double* gkd = grad_of(kdi);
      double* gv = grad_of(vi);
      const double* go = oi->grad.data();
      const double* O = oi->data.data();
      std::vector<double> S(d * d), z(d), G(d * d), dz(d), a(n * d), beta(n), tmp(d);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t base = b * n * D + h * d;
          for (std::size_t m = 0; m < n; ++m) {
            const std::size_t di = (b * heads + h) * n + m;
            const double dn = (*den)[di];
            const double* gom = go + base + m * D;
            // A clamped row saw no usable key mass; it passes no gradient.
            const bool dead = (*clamped)[di] != 0;
            for (std::size_t j = 0; j < d; ++j) a[m * d + j] = dead ? 0.0 : f * gom[j] / dn;
            beta[m] = dead ? 0.0 : -f * kernels::dot(gom, O + base + m * D, d) / dn;
          }
          auto w_at = [&](std::size_t j) { return mask_at(*mask, b * n + j); };
          auto add_key = [&](std::size_t j) {
            const double w = w_at(j);
            if (w == 0.0) return;
            const double* knj = kni->data.data() + base + j * D;
            const double* kdj = kdi->data.data() + base + j * D;
            const double* vj = vi->data.data() + base + j * D;
            for (std::size_t i = 0; i < d; ++i) {
              kernels::axpy(w * knj[i], vj, S.data() + i * d, d);
              z[i] += w * kdj[i];
            }
          };
          // Query-side gradients need the state each query saw.
          std::fill(S.begin(), S.end(), 0.0);
          std::fill(z.begin(), z.end(), 0.0);
          if (!causal)
            for (std::size_t j = 0; j < n; ++j) add_key(j);
          for (std::size_t m = 0; m < n; ++m) {
            if (causal) add_key(m);
            if (gqn) {
              double* g = gqn + base + m * D;
              for (std::size_t i = 0; i < d; ++i) g[i] += kernels::dot(S.data() + i * d, &a[m * d], d);
            }
            if (gqd) kernels::axpy(beta[m], z.data(), gqd + base + m * D, d);
          }
          // Key-side gradients need the adjoint state of every query that saw the key.
          std::fill(G.begin(), G.end(), 0.0);
          std::fill(dz.begin(), dz.end(), 0.0);
          auto add_query = [&](std::size_t m) {
            const double* qnm = qni->data.data() + base + m * D;
            const double* qdm = qdi->data.data() + base + m * D;
            for (std::size_t i = 0; i < d; ++i) kernels::axpy(qnm[i], &a[m * d], G.data() + i * d, d);
            kernels::axpy(beta[m], qdm, dz.data(), d);
          };
          if (!causal)
            for (std::size_t m = 0; m < n; ++m) add_query(m);
          for (std::size_t jj = n; jj-- > 0;) {
            if (causal) add_query(jj);
            const double w = w_at(jj);
            if (w == 0.0) continue;
            const double* knj = kni->data.data() + base + jj * D;
            const double* vj = vi->data.data() + base + jj * D;
            if (gkn) {
              double* g = gkn + base + jj * D;
              for (std::size_t i = 0; i < d; ++i) g[i] += w * kernels::dot(G.data() + i * d, vj, d);
            }
            if (gv) {
              std::fill(tmp.begin(), tmp.end(), 0.0);
              for (std::size_t i = 0; i < d; ++i) kernels::axpy(knj[i], G.data() + i * d, tmp.data(), d);
              kernels::axpy(w, tmp.data(), gv + base + jj * D, d);
            }
            if (gkd) kernels::axpy(w, dz.data(), gkd + base + jj * D, d);
          }
        }
    });
  }
  return res;
}

AttentionOutput linear_attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal,
                                 std::size_t heads, std::span<const double> key_mask, bool materialize) {
  check_inputs("linear_attention", q, k, v, heads, key_mask);
  const Tensor qp = kernel_phi(q);
  const Tensor kp = kernel_phi(k);
  return linear_mix(qp, kp, qp, kp, v, heads, causal, 1.0, 0.0, key_mask, materialize);
}

AttentionOutput rela(const Tensor& q, const Tensor& k, const Tensor& v, const positional::RopeTable& rope,
                     const AttentionConfig& cfg, std::span<const double> key_mask, std::size_t position_offset) {
  const Layout l = check_inputs("rela", q, k, v, cfg.heads, key_mask);
  cfg.validate(l.dim);
  if (rope.dim() != l.dim)
    throw DimensionError("rela: rotary table covers " + std::to_string(rope.dim()) + " features, inputs have " +
                         std::to_string(l.dim));
  const Tensor qp = kernel_phi(q);
  const Tensor kp = kernel_phi(k);
  const Tensor qr = positional::rope_apply(qp, rope, position_offset);
  const Tensor kr = positional::rope_apply(kp, rope, position_offset);
  const std::size_t len = cfg.scale_len != 0 ? cfg.scale_len : l.n;
  const double f = cfg.scale_n ? 1.0 / static_cast<double>(len) : 1.0;
  return linear_mix(qr, kr, qp, kp, v, cfg.heads, cfg.causal, f, cfg.eps, key_mask, cfg.materialize);
}

AttentionOutput dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal,
                                      std::size_t heads, std::span<const double> key_mask, bool materialize) {
  const Layout l = check_inputs("dot_product_attention", q, k, v, heads, key_mask);
  if (materialize && l.batch != 1) throw ContractError("dot_product_attention: mixing matrix needs a single sequence");
  const std::size_t n = l.n, D = l.dim, d = l.hd;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  auto P = std::make_shared<std::vector<double>>(l.batch * heads * n * n, 0.0);
  auto mask = std::make_shared<std::vector<double>>(key_mask.begin(), key_mask.end());

  AttentionOutput res;
  res.output = Tensor(v.shape());
  for (std::size_t b = 0; b < l.batch; ++b)
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t base = b * n * D + h * d;
      for (std::size_t m = 0; m < n; ++m) {
        double* p = P->data() + ((b * heads + h) * n + m) * n;
        const std::size_t end = causal ? m + 1 : n;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < end; ++j) {
          if (mask_at(*mask, b * n + j) == 0.0) continue;
          p[j] = scale * kernels::dot(q.ptr() + base + m * D, k.ptr() + base + j * D, d);
          mx = std::max(mx, p[j]);
        }
        if (mx == -std::numeric_limits<double>::infinity()) continue;  // no visible key: zero row
        double total = 0.0;
        for (std::size_t j = 0; j < end; ++j) {
          if (mask_at(*mask, b * n + j) == 0.0) continue;
          p[j] = std::exp(p[j] - mx);
          total += p[j];
        }
        double* o = res.output.ptr() + base + m * D;
        for (std::size_t j = 0; j < end; ++j) {
          p[j] /= total;
          if (p[j] != 0.0) kernels::axpy(p[j], v.ptr() + base + j * D, o, d);
        }
      }
    }

  if (materialize) res.mixing_matrix = Tensor(Shape{heads, n, n}, std::span<const double>(*P));

  if (needs_grad({&q, &k, &v})) {
    TensorImpl* qi = q.impl().get();
    TensorImpl* ki = k.impl().get();
    TensorImpl* vi = v.impl().get();
    TensorImpl* oi = res.output.impl().get();
    const std::size_t batch = l.batch;
    record("dot_product_attention", {&q, &k, &v}, res.output, [=] {
      double* gq = grad_of(qi);
      double* gk = grad_of(ki);
      double* gv = grad_of(vi);
      const double* go = oi->grad.data();
      std::vector<double> dp(n);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t base = b * n * D + h * d;
          for (std::size_t m = 0; m < n; ++m) {
            const double* p = P->data() + ((b * heads + h) * n + m) * n;
            const double* gom = go + base + m * D;
            const std::size_t end = causal ? m + 1 : n;
            double row = 0.0;
            for (std::size_t j = 0; j < end; ++j) {
              dp[j] = p[j] != 0.0 ? kernels::dot(gom, vi->data.data() + base + j * D, d) : 0.0;
              row += p[j] * dp[j];
            }
            for (std::size_t j = 0; j < end; ++j) {
              if (p[j] == 0.0) continue;
              const double ds = p[j] * (dp[j] - row) * scale;
              if (gq) kernels::axpy(ds, ki->data.data() + base + j * D, gq + base + m * D, d);
              if (gk) kernels::axpy(ds, qi->data.data() + base + m * D, gk + base + j * D, d);
              if (gv) kernels::axpy(p[j], gom, gv + base + j * D, d);
            }
          }
        }
    });
  }
  return res;
}

Tensor materialize_mixing_matrix(const Tensor& q, const Tensor& k, Variant variant, bool causal,
                                 const positional::RopeTable* rope, std::size_t position_offset) {
  if (q.rank() != 2 || k.shape() != q.shape())
    throw DimensionError("materialize_mixing_matrix: expected matching [N, d], got " + shape_string(q.shape()) +
                         " and " + shape_string(k.shape()));
  const std::size_t n = q.dim(0), d = q.dim(1);
  if (n > kMaxMaterializedN)
    throw ResourceError("materialize_mixing_matrix: N = " + std::to_string(n) + " exceeds the " +
                        std::to_string(kMaxMaterializedN) + " guard");
  Tensor a(Shape{n, n});
  if (variant == Variant::DotProduct) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t m = 0; m < n; ++m) {
      const std::size_t end = causal ? m + 1 : n;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < end; ++j) {
        a[m * n + j] = scale * kernels::dot(q.ptr() + m * d, k.ptr() + j * d, d);
        mx = std::max(mx, a[m * n + j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j < end; ++j) total += (a[m * n + j] = std::exp(a[m * n + j] - mx));
      for (std::size_t j = 0; j < end; ++j) a[m * n + j] /= total;
    }
    return a;
  }
  Tensor qf = kernel_phi(q.detach());
  Tensor kf = kernel_phi(k.detach());
  if (variant == Variant::RELA) {
    if (rope == nullptr) throw ContractError("materialize_mixing_matrix: RELA needs a rotary table");
    qf = positional::rope_apply(qf, *rope, position_offset);
    kf = positional::rope_apply(kf, *rope, position_offset);
  }
  for (std::size_t m = 0; m < n; ++m) {
    const std::size_t end = causal ? m + 1 : n;
    for (std::size_t j = 0; j < end; ++j) a[m * n + j] = kernels::dot(qf.ptr() + m * d, kf.ptr() + j * d, d);
  }
  return a;
}

// ---- streaming inference kernels -------------------------------------------

namespace {

template <class T>
inline void phi_row(const T* x, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] + T(1) : std::exp(x[i]);
}

template <class T>
void linear_family(const T* q, const T* k, const T* v, T* out, std::size_t n, std::size_t heads, std::size_t hd,
                   bool causal, const positional::RopeTable* rope, double f_in, double eps_in) {
  const std::size_t D = heads * hd;
  const T f = static_cast<T>(f_in), eps = static_cast<T>(eps_in);
  memory::Buffer<T> state(heads * hd * hd + D, T(0));
  memory::Buffer<T> rows(4 * D);
  T* S = state.data();
  T* z = state.data() + heads * hd * hd;
  T* kp = rows.data();
  T* kr = rows.data() + D;
  T* qp = rows.data() + 2 * D;
  T* qr = rows.data() + 3 * D;

  auto add_key = [&](std::size_t j) {
    phi_row(k + j * D, kp, D);
    std::copy_n(kp, D, kr);
    if (rope) positional::rotate_pairs(*rope, j, 0, D / 2, kr);
    for (std::size_t h = 0; h < heads; ++h) {
      T* Sh = S + h * hd * hd;
      for (std::size_t i = 0; i < hd; ++i) kernels::axpy(kr[h * hd + i], v + j * D + h * hd, Sh + i * hd, hd);
    }
    for (std::size_t i = 0; i < D; ++i) z[i] += kp[i];
  };
  if (!causal)
    for (std::size_t j = 0; j < n; ++j) add_key(j);
  for (std::size_t m = 0; m < n; ++m) {
    if (causal) add_key(m);
    phi_row(q + m * D, qp, D);
    std::copy_n(qp, D, qr);
    if (rope) positional::rotate_pairs(*rope, m, 0, D / 2, qr);
    T* o = out + m * D;
    std::fill_n(o, D, T(0));
    for (std::size_t h = 0; h < heads; ++h) {
      const T* Sh = S + h * hd * hd;
      for (std::size_t i = 0; i < hd; ++i) kernels::axpy(qr[h * hd + i], Sh + i * hd, o + h * hd, hd);
      T den = f * kernels::dot(qp + h * hd, z + h * hd, hd) + eps;
      if (!(den > T(0))) den = std::numeric_limits<T>::min();
      const T s = f / den;
      for (std::size_t j = 0; j < hd; ++j) o[h * hd + j] *= s;
    }
  }
}

}  // namespace

template <class T>
void rela_forward(const T* q, const T* k, const T* v, T* out, std::size_t n, std::size_t heads, std::size_t head_dim,
                  bool causal, const positional::RopeTable& rope, double f, double eps) {
  if (rope.dim() != heads * head_dim) throw DimensionError("rela_forward: rotary table width mismatch");
  if (n > rope.max_len()) throw BoundsError("rela_forward: sequence exceeds rotary table");
  linear_family(q, k, v, out, n, heads, head_dim, causal, &rope, f, eps);
}

template <class T>
void linear_forward(const T* q, const T* k, const T* v, T* out, std::size_t n, std::size_t heads,
                    std::size_t head_dim, bool causal) {
  linear_family(q, k, v, out, n, heads, head_dim, causal, nullptr, 1.0, 0.0);
}

template <class T>
void dot_product_forward(const T* q, const T* k, const T* v, T* out, std::size_t n, std::size_t heads,
                         std::size_t head_dim, bool causal) {
  using kernels::Trans;
  const std::size_t D = heads * head_dim;
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  memory::Buffer<T> scores(n * n);
  for (std::size_t h = 0; h < heads; ++h) {
    kernels::gemm(Trans::No, Trans::Yes, n, n, head_dim, scale, q + h * head_dim, D, k + h * head_dim, D, T(0),
                  scores.data(), n);
    for (std::size_t m = 0; m < n; ++m) {
      T* row = scores.data() + m * n;
      const std::size_t end = causal ? m + 1 : n;
      const T mx = *std::max_element(row, row + end);
      T total = 0;
      for (std::size_t j = 0; j < end; ++j) total += (row[j] = std::exp(row[j] - mx));
      const T inv = T(1) / total;
      for (std::size_t j = 0; j < end; ++j) row[j] *= inv;
      std::fill(row + end, row + n, T(0));
    }
    kernels::gemm(Trans::No, Trans::No, n, head_dim, n, T(1), scores.data(), n, v + h * head_dim, D, T(0),
                  out + h * head_dim, D);
  }
}

template void rela_forward<double>(const double*, const double*, const double*, double*, std::size_t, std::size_t,
                                   std::size_t, bool, const positional::RopeTable&, double, double);
template void rela_forward<float>(const float*, const float*, const float*, float*, std::size_t, std::size_t,
                                  std::size_t, bool, const positional::RopeTable&, double, double);
template void linear_forward<double>(const double*, const double*, const double*, double*, std::size_t, std::size_t,
                                     std::size_t, bool);
template void linear_forward<float>(const float*, const float*, const float*, float*, std::size_t, std::size_t,
                                    std::size_t, bool);
template void dot_product_forward<double>(const double*, const double*, const double*, double*, std::size_t,
                                          std::size_t, std::size_t, bool);
template void dot_product_forward<float>(const float*, const float*, const float*, float*, std::size_t, std::size_t,
                                         std::size_t, bool);

}  // namespace grela::attention
