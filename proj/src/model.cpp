#include "grela/model.hpp"

#include <string>

#include "grela/attention.hpp"
#include "grela/error.hpp"
#include "grela/ops.hpp"
#include "record.hpp"

namespace grela {

using detail::grad_of;
using detail::needs_grad;
using detail::record;

std::vector<std::pair<std::string, Tensor>> BlockParams::named(const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto add = [&](const char* name, const Tensor& t) {
    if (t.defined()) out.emplace_back(prefix + name, t);
  };
  add("norm1.gain", norm1_gain);
  add("norm1.bias", norm1_bias);
  add("w_q", w_q);
  add("w_k", w_k);
  add("w_in", w_in);
  add("b_in", b_in);
  add("conv", conv);
  add("w_gate", w_gate);
  add("b_gate", b_gate);
  add("w_out", w_out);
  add("b_out", b_out);
  add("norm2.gain", norm2_gain);
  add("norm2.bias", norm2_bias);
  add("mlp.w4", w4);
  add("mlp.b4", b4);
  add("mlp.w5", w5);
  add("mlp.b5", b5);
  return out;
}

Tensor causal_conv(const Tensor& x, const Tensor& kernel) {
  if (x.rank() != 2 && x.rank() != 3)
    throw DimensionError("causal_conv: expected [N, D] or [B, N, D], got " + shape_string(x.shape()));
  if (kernel.rank() != 2 || kernel.dim(1) != x.dim(-1))
    throw DimensionError("causal_conv: kernel " + shape_string(kernel.shape()) + " does not match input " +
                         shape_string(x.shape()));
  const std::size_t k = kernel.dim(0), n = x.dim(-2), D = x.dim(-1);
  const std::size_t batch = x.size() / (n * D);
  Tensor out(x.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < n; ++t) {
      double* o = out.ptr() + (b * n + t) * D;
      for (std::size_t j = 0; j < k; ++j) {
        if (t + j < k - 1) continue;
        const std::size_t src = t + j - (k - 1);
        const double* xs = x.ptr() + (b * n + src) * D;
        const double* w = kernel.ptr() + j * D;
        for (std::size_t c = 0; c < D; ++c) o[c] += w[c] * xs[c];
      }
    }
  if (needs_grad({&x, &kernel})) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* ki = kernel.impl().get();
    TensorImpl* oi = out.impl().get();
    record("causal_conv", {&x, &kernel}, out, [=] {
      double* gx = grad_of(xi);
      double* gk = grad_of(ki);
      const double* go = oi->grad.data();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < n; ++t) {
          const double* g = go + (b * n + t) * D;
          for (std::size_t j = 0; j < k; ++j) {
            if (t + j < k - 1) continue;
            const std::size_t src = (b * n + t + j - (k - 1)) * D;
            const double* w = ki->data.data() + j * D;
            const double* xs = xi->data.data() + src;
            for (std::size_t c = 0; c < D; ++c) {
              if (gx) gx[src + c] += w[c] * g[c];
              if (gk) gk[j * D + c] += xs[c] * g[c];
            }
          }
        }
    });
  }
  return out;
}

Tensor rank_augmentation(const Tensor& v, const Tensor& kernel) {
  if (kernel.rank() != 2 || kernel.dim(0) == 0) throw ContractError("rank_augmentation: kernel width must be >= 1");
  return ops::silu(causal_conv(v, kernel));
}

Tensor fuse(const Tensor& o, const Tensor& s) {
  if (o.shape() != s.shape())
    throw DimensionError("fuse: " + shape_string(o.shape()) + " vs " + shape_string(s.shape()));
  return ops::add(o, s);
}

Tensor gated_rank_selector(const Tensor& h, const Tensor& h_g, const Tensor& fused, const BlockParams& p,
                           const ModelConfig& cfg, bool training, Rng& rng, Tensor* gate_out) {
  Tensor mixed = fused;
  if (cfg.gate) {
    const Tensor gate = ops::activation(cfg.gate_activation, ops::add(ops::matmul(h_g, p.w_gate), p.b_gate));
    if (gate_out) *gate_out = gate;
    mixed = ops::mul(gate, fused);
  }
  const Tensor projected = ops::add(ops::matmul(mixed, p.w_out), p.b_out);
  const Tensor branch = h.rank() == 3 ? ops::drop_path(projected, cfg.drop_path, training, rng) : projected;
  return ops::add(branch, h);
}

Tensor grela_block(const Tensor& h, const BlockParams& p, const positional::RopeTable& rope, const ModelConfig& cfg,
                   std::span<const double> key_mask, bool training, Rng& rng, BlockTrace* trace) {
  const Tensor h_g = ops::layer_norm(h, p.norm1_gain, p.norm1_bias, cfg.ln_eps);
  const Tensor q = ops::matmul(h_g, p.w_q);
  const Tensor k = ops::matmul(h_g, p.w_k);
  Tensor v = ops::add(ops::matmul(h_g, p.w_in), p.b_in);
  if (!key_mask.empty()) v = ops::row_scale(v, key_mask);

  attention::AttentionOutput att;
  switch (cfg.attention) {
    case attention::Variant::RELA:
      att = attention::rela(q, k, v, rope, cfg.attention_config(), key_mask);
      break;
    case attention::Variant::Linear:
      att = attention::linear_attention(q, k, v, cfg.causal, cfg.heads, key_mask);
      break;
    case attention::Variant::DotProduct:
      att = attention::dot_product_attention(q, k, v, cfg.causal, cfg.heads, key_mask);
      break;
  }
  Tensor s;
  Tensor fused = att.output;
  if (cfg.rank_augmentation) {
    s = rank_augmentation(v, p.conv);
    fused = fuse(att.output, s);
  }
  Tensor gate;
  Tensor out = gated_rank_selector(h, h_g, fused, p, cfg, training, rng, &gate);
  if (trace) *trace = BlockTrace{h_g, q, k, v, att.output, s, fused, gate, out};
  return out;
}

Tensor mlp(const Tensor& h3, const BlockParams& p, const ModelConfig& cfg, bool training, Rng& rng) {
  const Tensor h4 = ops::layer_norm(h3, p.norm2_gain, p.norm2_bias, cfg.ln_eps);
  Tensor hidden = ops::activation(cfg.mlp_activation, ops::add(ops::matmul(h4, p.w4), p.b4));
  hidden = ops::dropout(hidden, cfg.dropout, training, rng);
  Tensor out = ops::add(ops::matmul(hidden, p.w5), p.b5);
  out = ops::dropout(out, cfg.dropout, training, rng);
  return ops::add(out, h3);
}

std::size_t block_parameter_count(const ModelConfig& cfg) {
  const std::size_t D = cfg.dim;
  std::size_t n = 2 * D * D;           // W_Q, W_K
  n += D * D + D;                      // W_in, b_in
  n += D * D + D;                      // W_out, b_out
  if (cfg.gate) n += D * D + D;        // W_gate, b_gate
  if (cfg.rank_augmentation) n += cfg.conv_kernel * D;
  n += 2 * 2 * D;                      // two layer norms
  n += 4 * D * D + 4 * D + 4 * D * D + D;  // MLP
  return n;
}

namespace {

Tensor param(Shape shape, Rng& rng, double std) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.truncated_normal(std);
  t.set_requires_grad(true);
  return t;
}

Tensor constant(Shape shape, double value) {
  Tensor t(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

GrelaModel::GrelaModel(ModelConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (cfg_.vocab_size < 2) throw ConfigError("vocab_size must be set (at least 2, padding included)");
  const std::size_t D = cfg_.dim, V = cfg_.vocab_size, k = cfg_.conv_kernel;
  const double sd = cfg_.init_std;

  if (cfg_.position == PositionEncoding::Rope) {
    rope_ = std::make_shared<positional::RopeTable>(cfg_.max_len, D, cfg_.rope_base);
  } else {
    rope_ = std::make_shared<positional::RopeTable>(
        positional::RopeTable::from_thetas(cfg_.max_len, std::vector<double>(D / 2, 0.0)));
  }

  embedding = param({V, D}, rng, sd);
  embedding_norm_gain = constant({D}, 1.0);
  embedding_norm_bias = constant({D}, 0.0);
  if (cfg_.position == PositionEncoding::Lpe)
    position_table = positional::LearnablePositionTable::random(cfg_.max_len, D, sd, rng);

  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    BlockParams b;
    b.norm1_gain = constant({D}, 1.0);
    b.norm1_bias = constant({D}, 0.0);
    b.w_q = param({D, D}, rng, sd);
    b.w_k = param({D, D}, rng, sd);
    b.w_in = param({D, D}, rng, sd);
    b.b_in = constant({D}, 0.0);
    if (cfg_.rank_augmentation) b.conv = param({k, D}, rng, sd);
    if (cfg_.gate) {
      b.w_gate = param({D, D}, rng, sd);
      b.b_gate = constant({D}, 0.0);
    }
    b.w_out = constant({D, D}, 0.0);
    b.b_out = constant({D}, 0.0);
    b.norm2_gain = constant({D}, 1.0);
    b.norm2_bias = constant({D}, 0.0);
    b.w4 = param({D, 4 * D}, rng, sd);
    b.b4 = constant({4 * D}, 0.0);
    b.w5 = constant({4 * D, D}, 0.0);
    b.b5 = constant({D}, 0.0);
    blocks.push_back(std::move(b));
  }
}

std::vector<std::pair<std::string, Tensor>> GrelaModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("embedding", embedding);
  out.emplace_back("embedding_norm.gain", embedding_norm_gain);
  out.emplace_back("embedding_norm.bias", embedding_norm_bias);
  if (position_table) out.emplace_back("position_table", position_table->weights);
  for (std::size_t l = 0; l < blocks.size(); ++l)
    for (auto& np : blocks[l].named("blocks." + std::to_string(l) + ".")) out.push_back(std::move(np));
  return out;
}

std::size_t GrelaModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.size();
  return n;
}

void GrelaModel::randomize(Rng& rng, double std) {
  for (auto& [name, t] : named_parameters()) {
    const bool gain = name.find(".gain") != std::string::npos;
    Tensor handle = t;
    for (double& v : handle.data()) v = (gain ? 1.0 : 0.0) + rng.truncated_normal(std);
  }
}

std::vector<std::size_t> last_positions(std::span<const std::int32_t> ids, std::size_t batch) {
  if (batch == 0 || ids.size() % batch != 0)
    throw DimensionError("last_positions: " + std::to_string(ids.size()) + " ids do not split into " +
                         std::to_string(batch) + " rows");
  const std::size_t n = ids.size() / batch;
  std::vector<std::size_t> pos(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t p = n;
    while (p > 0 && ids[b * n + p - 1] == 0) --p;
    if (p == 0) throw ContractError("forward: sequence " + std::to_string(b) + " is all padding");
    pos[b] = p - 1;
  }
  return pos;
}

Tensor gather_positions(const Tensor& x, std::span<const std::size_t> positions) {
  if (x.rank() != 3 || positions.size() != x.dim(0))
    throw DimensionError("gather_positions: expected [B, N, D] with B positions, got " + shape_string(x.shape()));
  const std::size_t B = x.dim(0), n = x.dim(1), D = x.dim(2);
  for (auto p : positions)
    if (p >= n) throw BoundsError("gather_positions: position " + std::to_string(p) + " >= " + std::to_string(n));
  Tensor out(Shape{B, D});
  for (std::size_t b = 0; b < B; ++b) std::copy_n(x.ptr() + (b * n + positions[b]) * D, D, out.ptr() + b * D);
  if (needs_grad({&x})) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* oi = out.impl().get();
    std::vector<std::size_t> pos(positions.begin(), positions.end());
    record("gather_positions", {&x}, out, [=] {
      double* gx = grad_of(xi);
      if (!gx) return;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < D; ++c) gx[(b * n + pos[b]) * D + c] += oi->grad[b * D + c];
    });
  }
  return out;
}

Tensor GrelaModel::embed(std::span<const std::int32_t> ids, std::size_t batch, bool training, Rng& rng) const {
  if (batch == 0 || ids.empty() || ids.size() % batch != 0)
    throw DimensionError("embed: " + std::to_string(ids.size()) + " ids do not split into " + std::to_string(batch) +
                         " rows");
  const std::size_t n = ids.size() / batch;
  if (n > cfg_.max_len)
    throw BoundsError("embed: sequence width " + std::to_string(n) + " exceeds max_len " +
                      std::to_string(cfg_.max_len));
  Tensor h = ops::embedding(embedding, ids, Shape{batch, n});
  if (cfg_.position == PositionEncoding::Ape) h = positional::ape_add(h);
  if (cfg_.position == PositionEncoding::Lpe) h = positional::lpe_add(h, *position_table);
  h = ops::dropout(h, cfg_.dropout, training, rng);
  return ops::layer_norm(h, embedding_norm_gain, embedding_norm_bias, cfg_.ln_eps);
}

Tensor GrelaModel::encode(std::span<const std::int32_t> ids, std::size_t batch, bool training, Rng& rng,
                          std::vector<BlockTrace>* traces) const {
  Tensor h = embed(ids, batch, training, rng);
  std::vector<double> mask(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) mask[i] = ids[i] != 0 ? 1.0 : 0.0;
  if (traces) traces->assign(blocks.size(), BlockTrace{});
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    h = grela_block(h, blocks[l], *rope_, cfg_, mask, training, rng, traces ? &(*traces)[l] : nullptr);
    h = mlp(h, blocks[l], cfg_, training, rng);
  }
  return h;
}

Tensor GrelaModel::represent(std::span<const std::int32_t> ids, std::size_t batch, bool training, Rng& rng) const {
  const auto pos = last_positions(ids, batch);
  return gather_positions(encode(ids, batch, training, rng), pos);
}

Tensor GrelaModel::forward(std::span<const std::int32_t> ids, std::size_t batch, bool training, Rng& rng) const {
  return ops::matmul_transposed(represent(ids, batch, training, rng), embedding);
}

}  // namespace grela
