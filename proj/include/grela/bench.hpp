#pragma once

// Analytic FLOP model, runtime/memory sweeps and matrix-rank probes.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "grela/attention.hpp"
#include "grela/tensor.hpp"

namespace grela::bench {

// Closed-form forward FLOPs of an L-layer stack (prediction layer excluded),
// multiply-adds counted as 2. Terms, per layer:
//   projections    2 N D^2 x 5 (Q, K, W_in, gate, W_out) + biases
//   attention_mix  linear forms: h 4 N d^2 (state build + read-out); dot product: h 4 N^2 d
//   normalization  linear forms: h 4 N d (key sum, query dot, divide); dot product: h 3 N^2 (exp, sum, divide)
//   feature_map    linear forms: phi on Q and K (2 N D); rela adds rotation (6 N D)
//   conv           2 N D k + SiLU (4 N D)
//   gating         gate activation (4 N D) + product (N D)
//   norms          2 layer norms (8 N D each) + residual adds (2 N D)
//   mlp            16 N D^2 + 5 N D (biases) + activation (8 N 4D)
struct FlopsBreakdown {
  std::vector<std::pair<std::string, double>> terms;
  double total = 0.0;
  double term(const std::string& name) const;
};
FlopsBreakdown flops_estimate(attention::Variant variant, std::size_t n, std::size_t dim, std::size_t heads,
                              std::size_t conv_kernel, std::size_t layers);

// Least-squares slope of log(y) on log(x).
double fit_loglog_exponent(const std::vector<double>& x, const std::vector<double>& y);

struct BenchPoint {
  double x = 0.0;
  double median_seconds = 0.0;
  std::vector<double> samples;
  std::size_t peak_bytes = 0;  // working memory beyond inputs and outputs
  double flops = 0.0;
  bool oom = false;
};

struct BenchReport {
  std::string variant, axis, precision;
  std::size_t repeats = 0;
  std::vector<BenchPoint> points;
  double time_exponent = 0.0;    // fitted over non-OOM points
  double memory_exponent = 0.0;  // same, on peak bytes (0 when memory is flat)
  // Largest peak-memory ratio between consecutive points.
  double max_memory_step_ratio() const;
  std::string to_tsv() const;
  std::string to_jsonl() const;
};

struct SweepOptions {
  attention::Variant variant = attention::Variant::RELA;
  std::string axis = "N";  // N: attention kernel alone; L, h: whole model forward
  std::vector<std::size_t> values;
  std::size_t repeats = 5;
  std::size_t warmup = 1;
  std::size_t n = 200;  // sequence length when the axis is not N
  std::size_t dim = 64;
  std::size_t heads = 1;  // kernel sweeps default to a single 64-wide head
  std::size_t layers = 4;
  std::size_t conv_kernel = 4;
  bool causal = true;
  bool single_precision = false;
  std::size_t memory_limit_bytes = std::size_t(2) << 30;  // scratch above this is reported as OOM
  std::uint64_t seed = 0;
};

// Values must be ascending; repeats >= 5. Points whose allocation fails (or
// would exceed memory_limit_bytes) are marked OOM and the sweep continues.
BenchReport runtime_sweep(const SweepOptions& opt);

struct RankProbe {
  std::size_t rank = 0;
  double tolerance = 0.0;
  std::vector<double> singular_values;
};
// tolerance = max(rows, cols) * sigma_1 * machine epsilon. Rows > 4096 is a
// ResourceError.
RankProbe rank_probe(const Tensor& matrix);
// Rows of |value|, whitespace separated, one matrix row per line.
std::string heatmap_grid(const Tensor& matrix);

struct RankStudy {
  std::size_t n = 0, dim = 0, heads = 0, pool = 0;
  std::vector<std::size_t> without_conv;  // rank of the attention output O
  std::vector<std::size_t> with_conv;     // rank of O + S
  std::vector<std::size_t> mixing_rank;   // max per-head mixing-matrix rank
  double median_without = 0.0, median_with = 0.0;
  Tensor last_fused;  // O + S of the final seed, for the heatmap
};
// One attention block with weights drawn at std 1/sqrt(D) over sequences
// drawn from a pool of `pool` items, so the block input has rank <= pool.
RankStudy rank_augmentation_study(std::size_t seeds, std::size_t n = 200, std::size_t dim = 64, std::size_t heads = 4,
                                  std::size_t pool = 8, std::uint64_t base_seed = 0);

double median(std::vector<double> v);

}  // namespace grela::bench
