#pragma once

// The stacked recommender: embedding layer, L x (gated rotary linear-attention
// block + MLP), last-position read-out and tied-embedding logits.
//
// Id 0 is the padding item. Sequences are left-padded; padded positions are
// removed from every attention support and their values are zeroed before the
// convolution branch, so they never influence a real position.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "grela/config.hpp"
#include "grela/positional.hpp"
#include "grela/rng.hpp"
#include "grela/tensor.hpp"

namespace grela {

struct BlockParams {
  Tensor norm1_gain, norm1_bias;  // H_g = LayerNorm(H)
  Tensor w_q, w_k;                // [D, D]; there is no value projection
  Tensor w_in, b_in;              // V = H_g W_in + b_in
  Tensor conv;                    // [k, D] depthwise causal kernel, tap k-1 is the current position
  Tensor w_gate, b_gate;          // gate projection
  Tensor w_out, b_out;
  Tensor norm2_gain, norm2_bias;  // MLP pre-norm
  Tensor w4, b4;                  // [D, 4D]
  Tensor w5, b5;                  // [4D, D]

  std::vector<std::pair<std::string, Tensor>> named(const std::string& prefix) const;
};

// Intermediate values of one attention block, filled on request.
struct BlockTrace {
  Tensor h_g, q, k, v, attention, conv_branch, fused, gate, output;
};

// Depthwise causal convolution: out[t, c] = sum_j kernel[j, c] * x[t - (k-1) + j, c],
// zero left-padded. x is [N, D] or [B, N, D]. Differentiable in both inputs.
Tensor causal_conv(const Tensor& x, const Tensor& kernel);
// SiLU(causal_conv(v, kernel)).
Tensor rank_augmentation(const Tensor& v, const Tensor& kernel);
// O + S (shapes must match exactly).
Tensor fuse(const Tensor& o, const Tensor& s);
// DropPath((gate(H_g W_gate + b_gate) * fused) W_out + b_out) + H. With the
// gate disabled the product is skipped.
Tensor gated_rank_selector(const Tensor& h, const Tensor& h_g, const Tensor& fused, const BlockParams& p,
                           const ModelConfig& cfg, bool training, Rng& rng, Tensor* gate_out = nullptr);
// One attention block. key_mask has one entry per (batch row, position).
Tensor grela_block(const Tensor& h, const BlockParams& p, const positional::RopeTable& rope, const ModelConfig& cfg,
                   std::span<const double> key_mask, bool training, Rng& rng, BlockTrace* trace = nullptr);
// H3 + Drop(Drop(act(LN(H3) W4 + b4)) W5 + b5).
Tensor mlp(const Tensor& h3, const BlockParams& p, const ModelConfig& cfg, bool training, Rng& rng);

// Closed-form trainable parameter count of one block under cfg's toggles.
std::size_t block_parameter_count(const ModelConfig& cfg);

class GrelaModel {
 public:
  // Builds and initializes: truncated normal(init_std) for the embedding and
  // projection weights, zeros for biases, W_out and W5, ones for norm gains.
  GrelaModel(ModelConfig cfg, Rng& rng);

  const ModelConfig& config() const noexcept { return cfg_; }
  std::size_t vocab_size() const noexcept { return cfg_.vocab_size; }

  Tensor embedding;  // [|V|, D], row 0 = padding
  Tensor embedding_norm_gain, embedding_norm_bias;
  std::optional<positional::LearnablePositionTable> position_table;
  std::vector<BlockParams> blocks;

  const positional::RopeTable& rope() const noexcept { return *rope_; }

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::size_t parameter_count() const;
  // Overwrites every parameter (biases, gains, W_out and W5 included) with
  // truncated-normal draws; gains are centered at 1. Used by gradient checks,
  // where zero-initialized tails would hide upstream gradients.
  void randomize(Rng& rng, double std);

  // ids: batch x N item ids, row-major. N must not exceed max_len.
  Tensor embed(std::span<const std::int32_t> ids, std::size_t batch, bool training, Rng& rng) const;
  // Hidden states after all layers, [B, N, D].
  Tensor encode(std::span<const std::int32_t> ids, std::size_t batch, bool training, Rng& rng,
                std::vector<BlockTrace>* traces = nullptr) const;
  // Representation at the last non-padding position of every row, [B, D].
  Tensor represent(std::span<const std::int32_t> ids, std::size_t batch, bool training, Rng& rng) const;
  // Scores for every vocabulary slot, padding included, [B, |V|].
  Tensor forward(std::span<const std::int32_t> ids, std::size_t batch, bool training, Rng& rng) const;

 private:
  ModelConfig cfg_;
  std::shared_ptr<const positional::RopeTable> rope_;
};

// Per-row last non-padding position; throws ContractError for an
// all-padding row.
std::vector<std::size_t> last_positions(std::span<const std::int32_t> ids, std::size_t batch);
// x [B, N, D] -> [B, D] taking row b at positions[b]. Differentiable.
Tensor gather_positions(const Tensor& x, std::span<const std::size_t> positions);

}  // namespace grela
