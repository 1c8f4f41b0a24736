#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "grela/config.hpp"
#include "grela/data.hpp"
#include "grela/model.hpp"
#include "grela/tensor.hpp"

namespace grela::training {

// Mean over rows of -log softmax(logits)[target], the softmax taken over
// columns 1..|V|-1 (the padding column is not a candidate). A padding or
// out-of-range target is a ContractError. Differentiable in logits.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets);

struct RankMetrics {
  double hr = 0.0, ndcg = 0.0, mrr = 0.0;
};
// HR = [r <= K], NDCG = [r <= K] / log2(r + 1), MRR = [r <= K] / r.
RankMetrics metrics_for_rank(std::size_t rank, std::size_t k);
// 1-based rank of target among items 1..|V|-1; ties go to the smaller id.
// Items with excluded[id] set are skipped (never the target). A non-finite
// target score ranks last.
std::size_t target_rank(std::span<const double> scores, std::int32_t target,
                        std::span<const char> excluded = {});
RankMetrics rank_metrics(std::span<const double> scores, std::int32_t target, std::size_t k);

struct MetricsReport {
  std::string split;
  std::size_t epoch = 0;
  double wall_seconds = 0.0;
  std::size_t examples = 0;
  std::optional<double> train_loss;
  std::map<std::size_t, RankMetrics> at;  // keyed by K

  // "hr@10", "ndcg@5", ...
  double get(const std::string& metric) const;
  std::string to_json() const;
};

struct AdamConfig {
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

// Bias-corrected Adam over named parameters, reading their .grad buffers.
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Tensor>> params, AdamConfig cfg);
  // Throws NumericError naming the first parameter with a non-finite gradient
  // (parameters are left untouched in that case).
  void step();
  std::size_t steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return cfg_; }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig cfg_;
  std::size_t t_ = 0;
};

// Global L2 norm of all gradients; rescales them to max_norm when larger.
double clip_gradients(const std::vector<std::pair<std::string, Tensor>>& params, double max_norm);

struct EvalOptions {
  std::vector<std::size_t> topk{5, 10};
  bool mask_seen = false;  // drop items of the input window from the candidates
  std::size_t batch_size = 256;
};

MetricsReport evaluate(const GrelaModel& model, const data::InteractionDataset& ds, data::Split split,
                       const EvalOptions& opt);

struct TrainResult {
  std::vector<MetricsReport> history;  // one validation report per epoch
  std::size_t best_epoch = 0;
  double best_metric = 0.0;
  std::size_t epochs_run = 0;
  MetricsReport test;
  bool diverged = false;
  std::string stop_reason;
};

struct TrainHooks {
  std::ostream* metrics_log = nullptr;  // one JSON record per line
  std::string checkpoint_path;         // best parameters are saved here when set
  const RunConfig* run = nullptr;      // echoed into the checkpoint
  bool verbose = false;
};

// Epoch loop: shuffled train batches, Adam steps, validation after every
// epoch, strict-improvement early stopping. The model ends holding the best
// validation parameters; test metrics are computed with them. A non-finite
// loss stops training, restores the last good parameters and sets diverged.
TrainResult train(GrelaModel& model, const data::InteractionDataset& ds, const TrainConfig& cfg, std::uint64_t seed,
                  const TrainHooks& hooks = {});

// Tab-separated rows: Dataset, Metric, value.
std::string format_report_table(const MetricsReport& report, const std::string& dataset, const std::string& model);

}  // namespace grela::training
