#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "grela/attention.hpp"
#include "grela/ops.hpp"

namespace grela {

enum class PositionEncoding { Rope, Ape, Lpe, None };
PositionEncoding parse_position_encoding(std::string_view name);
std::string_view position_encoding_name(PositionEncoding p) noexcept;

struct ModelConfig {
  std::size_t vocab_size = 0;  // including the padding slot 0; taken from the dataset when 0
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t layers = 4;
  std::size_t max_len = 200;
  std::size_t conv_kernel = 4;
  double dropout = 0.1;
  double drop_path = 0.1;
  double attn_eps = 1e-6;
  bool scale_n = true;
  double ln_eps = 1e-12;
  double init_std = 0.02;
  double rope_base = 10000.0;
  attention::Variant attention = attention::Variant::RELA;
  bool causal = true;
  PositionEncoding position = PositionEncoding::Rope;
  bool rank_augmentation = true;
  bool gate = true;
  ops::Activation gate_activation = ops::Activation::SiLU;
  ops::Activation mlp_activation = ops::Activation::GELU;

  std::size_t head_dim() const noexcept { return heads == 0 ? 0 : dim / heads; }
  // "Long-term" regime: sequences longer than 1.5 times the embedding size.
  bool long_term() const noexcept { return static_cast<double>(max_len) > 1.5 * static_cast<double>(dim); }
  attention::AttentionConfig attention_config() const;
  // Returns every violated constraint (empty when valid).
  std::vector<std::string> problems() const;
  void validate() const;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 50;
  std::size_t patience = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
  std::optional<std::uint64_t> seed;
  std::string eval_metric = "ndcg@10";
  std::vector<std::size_t> topk{5, 10};
  bool mask_seen = false;

  std::vector<std::string> problems() const;
  void validate() const;
};

struct DataConfig {
  std::string input;
  std::string format = "tsv";
  std::string user_column = "user_id";
  std::string item_column = "item_id";
  std::string time_column = "timestamp";
  std::size_t min_user = 5;
  std::size_t min_item = 5;
  bool iterate_filter = true;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  std::string out = "run";

  std::vector<std::string> problems() const;
  void validate() const;
};

// Flat "key = value" text, '#' starts a comment. Every line is checked
// against the schema; unknown keys and bad values are all collected and
// thrown together as one ConfigError.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::string& path, RunConfig base = {});
// Applies GRELA_<KEY> (key upper-cased) overrides, e.g. GRELA_DIM=32.
// `getenv` is injectable for tests.
void apply_env_overrides(RunConfig& cfg, const std::function<const char*(const char*)>& getenv);
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);
std::string config_to_text(const RunConfig& cfg);
std::vector<std::string> config_keys();
std::string env_name(std::string_view key);

}  // namespace grela
