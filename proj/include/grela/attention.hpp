#pragma once

// Attention kernels over [N, D] or [B, N, D] inputs. With h heads, head j
// owns feature columns [j*d, (j+1)*d). Key masks are per (batch row,
// position): 1 keeps a key, 0 removes it from every query's support.

#include <cstddef>
#include <span>
#include <string_view>

#include "grela/positional.hpp"
#include "grela/tensor.hpp"

namespace grela::attention {

enum class Variant { DotProduct, Linear, RELA };

Variant parse_variant(std::string_view name);
std::string_view variant_name(Variant v) noexcept;

struct AttentionConfig {
  Variant variant = Variant::RELA;
  std::size_t heads = 1;
  std::size_t head_dim = 64;
  bool causal = true;
  double eps = 1e-6;
  // Keys and values are scaled by 1/sqrt(scale_len) (so the key-value state
  // and the key mean both carry 1/scale_len). scale_len == 0 means "use the
  // sequence extent of the call".
  bool scale_n = true;
  std::size_t scale_len = 0;
  // Also return the per-head [h, N, N] matrix A with O = A V (single
  // sequence inputs only).
  bool materialize = false;

  std::size_t model_dim() const noexcept { return heads * head_dim; }
  // Throws ContractError listing the violated invariant.
  void validate(std::size_t model_dim) const;
};

struct AttentionOutput {
  Tensor output;
  Tensor mixing_matrix;        // undefined unless requested
  std::size_t floor_hits = 0;  // denominators raised to the underflow floor
};

// Smallest denominator a normalized linear form may divide by.
inline constexpr double kDenominatorFloor = 1e-30;

// ELU(x) + 1, strictly positive. Differentiable.
Tensor kernel_phi(const Tensor& x);

// softmax(Q K^T / sqrt(d)) V per head.
AttentionOutput dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal,
                                      std::size_t heads = 1, std::span<const double> key_mask = {},
                                      bool materialize = false);

// phi(Q) (sum_n phi(K_n)^T V_n) / (phi(Q) . sum_n phi(K_n)), streamed with
// running prefix states in causal mode.
AttentionOutput linear_attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal,
                                 std::size_t heads = 1, std::span<const double> key_mask = {},
                                 bool materialize = false);

// Rotary linear attention:
//   O_m = f R_m phi(Q_m) . sum_n R_n phi(K_n)^T V_n / (f phi(Q_m) . sum_n phi(K_n) + eps)
// with f = 1/scale_len when scale_n is on (1 otherwise). Rotations act on the
// full D-wide vectors before the head split; the denominator is unrotated.
AttentionOutput rela(const Tensor& q, const Tensor& k, const Tensor& v, const positional::RopeTable& rope,
                     const AttentionConfig& cfg, std::span<const double> key_mask = {},
                     std::size_t position_offset = 0);

// Differentiable core shared by the linear forms, exposed for tests:
//   O_m = f qn_m . S / (f qd_m . z + eps),  S = sum w_n kn_n v_n^T, z = sum w_n kd_n
// over n <= m (causal) or all n, per head.
AttentionOutput linear_mix(const Tensor& qn, const Tensor& kn, const Tensor& qd, const Tensor& kd, const Tensor& v,
                           std::size_t heads, bool causal, double f, double eps,
                           std::span<const double> key_mask = {}, bool materialize = false);

// Raw token-mixing scores for one head, q/k [N, d]:
//   DotProduct: softmax(q k^T / sqrt(d)) (rows sum to 1)
//   Linear:     phi(q) phi(k)^T
//   RELA:       (R phi(q)) (R phi(k))^T, positions shifted by position_offset
// Unmasked unless causal. N > 4096 is a ResourceError.
inline constexpr std::size_t kMaxMaterializedN = 4096;
Tensor materialize_mixing_matrix(const Tensor& q, const Tensor& k, Variant variant, bool causal = false,
                                 const positional::RopeTable* rope = nullptr, std::size_t position_offset = 0);

// Inference-only streaming kernels on raw row-major [N, D] buffers, used by
// the benchmarks (float and double instantiations). Scratch is taken from the
// tracked allocator: O(h d^2) for the linear kernels, O(N^2) for dot product.
template <class T>
void rela_forward(const T* q, const T* k, const T* v, T* out, std::size_t n, std::size_t heads,
                  std::size_t head_dim, bool causal, const positional::RopeTable& rope, double f, double eps);
template <class T>
void linear_forward(const T* q, const T* k, const T* v, T* out, std::size_t n, std::size_t heads,
                    std::size_t head_dim, bool causal);
template <class T>
void dot_product_forward(const T* q, const T* k, const T* v, T* out, std::size_t n, std::size_t heads,
                         std::size_t head_dim, bool causal);

}  // namespace grela::attention
