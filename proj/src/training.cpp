#include "grela/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "grela/checkpoint.hpp"
#include "grela/error.hpp"
#include "grela/tape.hpp"
#include "record.hpp"

namespace grela::training {

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy: expected [B, |V|], got " + shape_string(logits.shape()));
  const std::size_t B = logits.dim(0), V = logits.dim(1);
  if (targets.size() != B)
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(B) + " rows");
  if (V < 2) throw DimensionError("cross_entropy: vocabulary has no real items");
  for (auto t : targets)
    if (t <= 0 || static_cast<std::size_t>(t) >= V)
      throw ContractError("cross_entropy: target " + std::to_string(t) + " is padding or outside 1.." +
                          std::to_string(V - 1));

  auto lse = std::make_shared<std::vector<double>>(B);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const double* row = logits.ptr() + b * V;
    const double mx = *std::max_element(row + 1, row + V);
    double s = 0.0;
    for (std::size_t j = 1; j < V; ++j) s += std::exp(row[j] - mx);
    (*lse)[b] = mx + std::log(s);
    total += (*lse)[b] - row[targets[b]];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(B));
  if (detail::needs_grad({&logits})) {
    TensorImpl* li = logits.impl().get();
    TensorImpl* oi = out.impl().get();
    std::vector<std::int32_t> tg(targets.begin(), targets.end());
    detail::record("cross_entropy", {&logits}, out, [=] {
      double* g = detail::grad_of(li);
      if (!g) return;
      const double scale = oi->grad[0] / static_cast<double>(B);
      for (std::size_t b = 0; b < B; ++b) {
        const double* row = li->data.data() + b * V;
        double* gr = g + b * V;
        for (std::size_t j = 1; j < V; ++j) gr[j] += scale * std::exp(row[j] - (*lse)[b]);
        gr[tg[b]] -= scale;
      }
    });
  }
  return out;
}

RankMetrics metrics_for_rank(std::size_t rank, std::size_t k) {
  if (rank == 0 || rank > k) return {};
  const double r = static_cast<double>(rank);
  return {1.0, 1.0 / std::log2(r + 1.0), 1.0 / r};
}

std::size_t target_rank(std::span<const double> scores, std::int32_t target, std::span<const char> excluded) {
  if (target <= 0 || static_cast<std::size_t>(target) >= scores.size())
    throw ContractError("target_rank: target " + std::to_string(target) + " outside 1.." +
                        std::to_string(scores.size() - 1));
  const std::size_t t = static_cast<std::size_t>(target);
  std::size_t candidates = 0, ahead = 0;
  const double st = scores[t];
  for (std::size_t j = 1; j < scores.size(); ++j) {
    if (j != t && !excluded.empty() && excluded[j]) continue;
    ++candidates;
    if (j == t) continue;
    if (scores[j] > st || (scores[j] == st && j < t)) ++ahead;
  }
  if (!std::isfinite(st)) return candidates;
  return ahead + 1;
}

RankMetrics rank_metrics(std::span<const double> scores, std::int32_t target, std::size_t k) {
  return metrics_for_rank(target_rank(scores, target), k);
}

double MetricsReport::get(const std::string& metric) const {
  const auto at_pos = metric.find('@');
  if (at_pos == std::string::npos) throw ContractError("metric '" + metric + "' lacks @K");
  const std::string name = metric.substr(0, at_pos);
  const std::size_t k = std::stoul(metric.substr(at_pos + 1));
  const auto it = at.find(k);
  if (it == at.end()) throw ContractError("metric '" + metric + "': cutoff not evaluated");
  if (name == "hr") return it->second.hr;
  if (name == "ndcg") return it->second.ndcg;
  if (name == "mrr") return it->second.mrr;
  throw ContractError("unknown metric '" + metric + "'");
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["split"] = split;
  j["epoch"] = epoch;
  if (train_loss) j["train_loss"] = *train_loss;
  j["examples"] = examples;
  nlohmann::ordered_json m;
  for (const auto& [k, r] : at) {
    m["hr@" + std::to_string(k)] = r.hr;
    m["ndcg@" + std::to_string(k)] = r.ndcg;
    m["mrr@" + std::to_string(k)] = r.mrr;
  }
  j["metrics"] = m;
  j["wall_seconds"] = wall_seconds;
  return j.dump();
}

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (const auto& [name, p] : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  for (const auto& [name, p] : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.grad())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + name + "'");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor p = params_[i].second;
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mh = m[j] / bc1;
      const double vh = v[j] / bc2;
      p[j] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
    }
  }
}

double clip_gradients(const std::vector<std::pair<std::string, Tensor>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, p] : params)
    if (p.has_grad())
      for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& [name, p] : params) {
      Tensor t = p;
      if (t.has_grad())
        for (double& g : t.grad_mut()) g *= s;
    }
  }
  return norm;
}

MetricsReport evaluate(const GrelaModel& model, const data::InteractionDataset& ds, data::Split split,
                       const EvalOptions& opt) {
  const auto start = std::chrono::steady_clock::now();
  Tape::Pause no_grad;
  Rng rng(0);
  MetricsReport rep;
  rep.split = std::string(data::split_name(split));
  for (auto k : opt.topk) rep.at[k] = {};
  data::BatchSampler sampler(ds, split, opt.batch_size);
  std::vector<char> excluded(model.vocab_size(), 0);
  for (std::size_t bi = 0; bi < sampler.size(); ++bi) {
    const data::Batch b = sampler.batch(bi);
    const Tensor logits = model.forward(b.ids, b.size, false, rng);
    const std::size_t V = logits.dim(1);
    for (std::size_t r = 0; r < b.size; ++r) {
      std::span<const double> row(logits.ptr() + r * V, V);
      std::span<const char> ex;
      if (opt.mask_seen) {
        std::fill(excluded.begin(), excluded.end(), 0);
        for (std::size_t c = 0; c < b.width; ++c) excluded[static_cast<std::size_t>(b.ids[r * b.width + c])] = 1;
        ex = excluded;
      }
      const std::size_t rank = target_rank(row, b.targets[r], ex);
      for (auto& [k, m] : rep.at) {
        const RankMetrics x = metrics_for_rank(rank, k);
        m.hr += x.hr;
        m.ndcg += x.ndcg;
        m.mrr += x.mrr;
      }
      ++rep.examples;
    }
  }
  if (rep.examples)
    for (auto& [k, m] : rep.at) {
      const double n = static_cast<double>(rep.examples);
      m.hr /= n;
      m.ndcg /= n;
      m.mrr /= n;
    }
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

namespace {

using Snapshot = std::vector<std::vector<double>>;

Snapshot snapshot(const GrelaModel& model) {
  Snapshot s;
  for (const auto& [name, p] : model.named_parameters()) s.emplace_back(p.data().begin(), p.data().end());
  return s;
}

void restore(GrelaModel& model, const Snapshot& s) {
  auto params = model.named_parameters();
  for (std::size_t i = 0; i < params.size(); ++i) std::copy(s[i].begin(), s[i].end(), params[i].second.data().begin());
}

}  // namespace

TrainResult train(GrelaModel& model, const data::InteractionDataset& ds, const TrainConfig& cfg, std::uint64_t seed,
                  const TrainHooks& hooks) {
  cfg.validate();
  if (data::examples(ds, data::Split::Train).empty() || data::examples(ds, data::Split::Valid).empty())
    throw DataError("empty-split", "train: dataset needs non-empty train and valid splits");
  if (ds.vocab_size() != model.vocab_size())
    throw ContractError("train: dataset vocabulary " + std::to_string(ds.vocab_size()) + " != model vocabulary " +
                        std::to_string(model.vocab_size()));

  const auto params = model.named_parameters();
  Adam adam(params, {cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps});
  Rng dropout_rng(seed, 0x44524f50ull);
  const EvalOptions eval_opt{cfg.topk, cfg.mask_seen, 256};

  TrainResult res;
  Snapshot best = snapshot(model);
  double best_metric = -std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    data::BatchSampler sampler(ds, data::Split::Train, cfg.batch_size, Rng(seed, epoch)());
    const Snapshot last_good = snapshot(model);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    bool diverged = false;
    for (std::size_t bi = 0; bi < sampler.size(); ++bi) {
      const data::Batch b = sampler.batch(bi);
      for (const auto& [name, p] : params) Tensor(p).zero_grad();
      Tape tape;
      Tape::Scope scope(tape);
      const Tensor logits = model.forward(b.ids, b.size, true, dropout_rng);
      const Tensor loss = cross_entropy(logits, b.targets);
      if (!std::isfinite(loss.item())) {
        diverged = true;
        break;
      }
      tape.backward(loss);
      if (cfg.grad_clip > 0.0) clip_gradients(params, cfg.grad_clip);
      adam.step();
      loss_sum += loss.item() * static_cast<double>(b.size);
      loss_count += b.size;
    }
    for (const auto& [name, p] : params) Tensor(p).zero_grad();
    if (diverged) {
      restore(model, last_good);
      res.diverged = true;
      res.stop_reason = "non-finite loss in epoch " + std::to_string(epoch);
      break;
    }

    MetricsReport rep = evaluate(model, ds, data::Split::Valid, eval_opt);
    rep.epoch = epoch;
    rep.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    res.history.push_back(rep);
    res.epochs_run = epoch;
    if (hooks.metrics_log) *hooks.metrics_log << rep.to_json() << '\n' << std::flush;
    if (hooks.verbose)
      std::cerr << "epoch " << epoch << " loss " << *rep.train_loss << ' ' << cfg.eval_metric << ' '
                << rep.get(cfg.eval_metric) << '\n';

    const double metric = rep.get(cfg.eval_metric);
    if (metric > best_metric) {
      best_metric = metric;
      res.best_epoch = epoch;
      best = snapshot(model);
      stale = 0;
      if (!hooks.checkpoint_path.empty() && hooks.run)
        save_checkpoint(hooks.checkpoint_path, model, *hooks.run, seed,
                        {{"best_epoch", std::to_string(epoch)}, {cfg.eval_metric, std::to_string(metric)}});
    } else if (++stale >= cfg.patience) {
      res.stop_reason = "no improvement for " + std::to_string(stale) + " epoch(s)";
      break;
    }
  }
  if (res.stop_reason.empty()) res.stop_reason = "reached max_epochs";
  res.best_metric = res.best_epoch ? best_metric : 0.0;
  restore(model, best);
  res.test = evaluate(model, ds, data::Split::Test, eval_opt);
  res.test.epoch = res.best_epoch;
  if (hooks.metrics_log) *hooks.metrics_log << res.test.to_json() << '\n' << std::flush;
  return res;
}

std::string format_report_table(const MetricsReport& report, const std::string& dataset, const std::string& model) {
  std::ostringstream os;
  os << "Dataset\tMetric\t" << model << '\n';
  os << std::fixed << std::setprecision(4);
  for (const char* name : {"hr", "ndcg", "mrr"})
    for (const auto& [k, m] : report.at) {
      std::string label = name == std::string("hr") ? "HR" : name == std::string("ndcg") ? "NDCG" : "MRR";
      os << dataset << '\t' << label << '@' << k << '\t' << report.get(std::string(name) + "@" + std::to_string(k)) << '\n';
    }
  return os.str();
}

}  // namespace grela::training
