#include "grela/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <new>
#include <sstream>

#include <json.hpp>

#include "grela/error.hpp"
#include "grela/linalg.hpp"
#include "grela/memory.hpp"
#include "grela/model.hpp"
#include "grela/positional.hpp"
#include "grela/tape.hpp"

namespace grela::bench {

double FlopsBreakdown::term(const std::string& name) const {
  for (const auto& [k, v] : terms)
    if (k == name) return v;
  throw ContractError("flops: no term '" + name + "'");
}

FlopsBreakdown flops_estimate(attention::Variant variant, std::size_t n, std::size_t dim, std::size_t heads,
                              std::size_t conv_kernel, std::size_t layers) {
  if (n == 0 || dim == 0 || heads == 0 || dim % heads != 0 || layers == 0)
    throw ContractError("flops_estimate: need positive N, D, L and heads dividing D");
  const double N = static_cast<double>(n), D = static_cast<double>(dim), h = static_cast<double>(heads);
  const double d = D / h, k = static_cast<double>(conv_kernel), L = static_cast<double>(layers);
  FlopsBreakdown f;
  auto add = [&](const char* name, double per_layer) { f.terms.emplace_back(name, L * per_layer); };
  add("projections", 5.0 * 2.0 * N * D * D + 3.0 * N * D);
  if (variant == attention::Variant::DotProduct) {
    add("attention_mix", h * 4.0 * N * N * d);
    add("normalization", h * 3.0 * N * N);
    add("feature_map", 0.0);
  } else {
    add("attention_mix", h * 4.0 * N * d * d);
    add("normalization", h * 4.0 * N * d);
    add("feature_map", 2.0 * N * D + (variant == attention::Variant::RELA ? 6.0 * N * D : 0.0));
  }
  add("conv", 2.0 * N * D * k + 4.0 * N * D);
  add("gating", 4.0 * N * D + N * D);
  add("norms", 2.0 * 8.0 * N * D + 2.0 * N * D);
  add("mlp", 16.0 * N * D * D + 5.0 * N * D + 8.0 * N * 4.0 * D);
  for (const auto& [name, v] : f.terms) f.total += v;
  return f;
}

double fit_loglog_exponent(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("fit_loglog_exponent: need two or more points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw ContractError("fit_loglog_exponent: values must be positive");
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double den = n * sxx - sx * sx;
  if (den == 0.0) throw ContractError("fit_loglog_exponent: x values are all equal");
  return (n * sxy - sx * sy) / den;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double BenchReport::max_memory_step_ratio() const {
  double worst = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (points[i].oom || points[i - 1].oom) continue;
    const double a = static_cast<double>(std::max<std::size_t>(points[i - 1].peak_bytes, 1));
    const double b = static_cast<double>(std::max<std::size_t>(points[i].peak_bytes, 1));
    worst = std::max(worst, b / a);
  }
  return worst;
}

std::string BenchReport::to_tsv() const {
  std::ostringstream os;
  os.precision(6);
  os << "variant\taxis\tvalue\tmedian_seconds\tpeak_bytes\tflops\tstatus\n";
  for (const auto& p : points)
    os << variant << '\t' << axis << '\t' << p.x << '\t' << p.median_seconds << '\t' << p.peak_bytes << '\t' << p.flops
       << '\t' << (p.oom ? "oom" : "ok") << '\n';
  os << "# fitted time exponent\t" << time_exponent << "\n# fitted memory exponent\t" << memory_exponent << '\n';
  return os.str();
}

std::string BenchReport::to_jsonl() const {
  std::string out;
  for (const auto& p : points) {
    nlohmann::ordered_json j;
    j["variant"] = variant;
    j["axis"] = axis;
    j["precision"] = precision;
    j["value"] = p.x;
    j["median_seconds"] = p.median_seconds;
    j["samples"] = p.samples;
    j["peak_bytes"] = p.peak_bytes;
    j["flops"] = p.flops;
    j["oom"] = p.oom;
    out += j.dump() + "\n";
  }
  nlohmann::ordered_json s;
  s["variant"] = variant;
  s["axis"] = axis;
  s["repeats"] = repeats;
  s["time_exponent"] = time_exponent;
  s["memory_exponent"] = memory_exponent;
  return out + s.dump() + "\n";
}

namespace {

using Clock = std::chrono::steady_clock;

template <class F>
BenchPoint measure(F&& run, std::size_t warmup, std::size_t repeats) {
  BenchPoint p;
  for (std::size_t i = 0; i < warmup; ++i) run();
  {
    memory::PeakScope scope;
    run();
    p.peak_bytes = scope.delta();
  }
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto t0 = Clock::now();
    run();
    p.samples.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
  }
  p.median_seconds = median(p.samples);
  return p;
}

template <class T>
BenchPoint kernel_point(const SweepOptions& opt, std::size_t n) {
  const std::size_t D = opt.dim, hd = opt.dim / opt.heads;
  if (opt.variant == attention::Variant::DotProduct && n * n * sizeof(T) > opt.memory_limit_bytes) {
    BenchPoint p;
    p.oom = true;
    return p;
  }
  Rng rng(opt.seed, n);
  std::vector<T> q(n * D), k(n * D), v(n * D), out(n * D);
  for (auto* buf : {&q, &k, &v})
    for (auto& x : *buf) x = static_cast<T>(0.5 * rng.normal());
  std::optional<positional::RopeTable> rope;
  if (opt.variant == attention::Variant::RELA) rope.emplace(n, D);
  auto run = [&] {
    switch (opt.variant) {
      case attention::Variant::RELA:
        attention::rela_forward<T>(q.data(), k.data(), v.data(), out.data(), n, opt.heads, hd, opt.causal, *rope,
                                   1.0 / static_cast<double>(n), 1e-6);
        break;
      case attention::Variant::Linear:
        attention::linear_forward<T>(q.data(), k.data(), v.data(), out.data(), n, opt.heads, hd, opt.causal);
        break;
      case attention::Variant::DotProduct:
        attention::dot_product_forward<T>(q.data(), k.data(), v.data(), out.data(), n, opt.heads, hd, opt.causal);
        break;
    }
  };
  try {
    return measure(run, opt.warmup, opt.repeats);
  } catch (const std::bad_alloc&) {
    BenchPoint p;
    p.oom = true;
    return p;
  }
}

BenchPoint model_point(const SweepOptions& opt, std::size_t value) {
  ModelConfig cfg;
  cfg.vocab_size = 1001;
  cfg.dim = opt.dim;
  cfg.heads = opt.axis == "h" ? value : opt.heads;
  cfg.layers = opt.axis == "L" ? value : opt.layers;
  cfg.max_len = opt.n;
  cfg.conv_kernel = opt.conv_kernel;
  cfg.attention = opt.variant;
  cfg.causal = opt.causal;
  cfg.dropout = 0.0;
  cfg.drop_path = 0.0;
  Rng rng(opt.seed, value);
  const GrelaModel model(cfg, rng);
  std::vector<std::int32_t> ids(opt.n);
  for (auto& id : ids) id = static_cast<std::int32_t>(1 + rng.below(cfg.vocab_size - 1));
  Tape::Pause no_grad;
  auto run = [&] { (void)model.encode(ids, 1, false, rng); };
  try {
    return measure(run, opt.warmup, opt.repeats);
  } catch (const std::bad_alloc&) {
    BenchPoint p;
    p.oom = true;
    return p;
  }
}

}  // namespace

BenchReport runtime_sweep(const SweepOptions& opt) {
  if (opt.values.empty()) throw ContractError("runtime_sweep: no sweep values");
  if (!std::is_sorted(opt.values.begin(), opt.values.end())) throw ContractError("runtime_sweep: values must be ascending");
  if (opt.repeats < 5) throw ContractError("runtime_sweep: repeats must be at least 5");
  if (opt.axis != "N" && opt.axis != "L" && opt.axis != "h")
    throw ContractError("runtime_sweep: axis must be N, L or h, got '" + opt.axis + "'");
  if (opt.heads == 0 || opt.dim % opt.heads != 0) throw ContractError("runtime_sweep: heads must divide dim");

  BenchReport rep;
  rep.variant = std::string(attention::variant_name(opt.variant));
  rep.axis = opt.axis;
  rep.repeats = opt.repeats;
  rep.precision = opt.single_precision ? "f32" : "f64";
  for (auto value : opt.values) {
    BenchPoint p;
    if (opt.axis == "N") {
      p = opt.single_precision ? kernel_point<float>(opt, value) : kernel_point<double>(opt, value);
      const auto f = flops_estimate(opt.variant, value, opt.dim, opt.heads, opt.conv_kernel, 1);
      p.flops = f.term("attention_mix") + f.term("normalization") + f.term("feature_map");
    } else {
      if (opt.axis == "h" && opt.dim % value != 0) throw ContractError("runtime_sweep: head count must divide dim");
      p = model_point(opt, value);
      const std::size_t heads = opt.axis == "h" ? value : opt.heads;
      const std::size_t layers = opt.axis == "L" ? value : opt.layers;
      p.flops = flops_estimate(opt.variant, opt.n, opt.dim, heads, opt.conv_kernel, layers).total;
    }
    p.x = static_cast<double>(value);
    rep.points.push_back(std::move(p));
  }
  std::vector<double> xs, ts, ms;
  for (const auto& p : rep.points)
    if (!p.oom) {
      xs.push_back(p.x);
      ts.push_back(std::max(p.median_seconds, 1e-12));
      ms.push_back(static_cast<double>(std::max<std::size_t>(p.peak_bytes, 1)));
    }
  if (xs.size() >= 2) {
    rep.time_exponent = fit_loglog_exponent(xs, ts);
    rep.memory_exponent = fit_loglog_exponent(xs, ms);
  }
  return rep;
}

RankProbe rank_probe(const Tensor& matrix) {
  if (matrix.rank() != 2) throw DimensionError("rank_probe: expected a matrix, got " + shape_string(matrix.shape()));
  if (matrix.dim(0) > attention::kMaxMaterializedN)
    throw ResourceError("rank_probe: " + std::to_string(matrix.dim(0)) + " rows exceed the " +
                        std::to_string(attention::kMaxMaterializedN) + " guard");
  const auto r = linalg::numerical_rank(matrix);
  return {r.rank, r.tolerance, r.singular_values};
}

std::string heatmap_grid(const Tensor& matrix) {
  if (matrix.rank() != 2) throw DimensionError("heatmap_grid: expected a matrix");
  std::ostringstream os;
  os.precision(6);
  const std::size_t rows = matrix.dim(0), cols = matrix.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) os << (c ? " " : "") << std::fabs(matrix[r * cols + c]);
    os << '\n';
  }
  return os.str();
}

namespace {

Tensor as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) { return Tensor(Shape{rows, cols}, t.data()); }

Tensor columns(const Tensor& m, std::size_t first, std::size_t count) {
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  Tensor out(Shape{rows, count});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < count; ++c) out[r * count + c] = m[r * cols + first + c];
  return out;
}

}  // namespace

RankStudy rank_augmentation_study(std::size_t seeds, std::size_t n, std::size_t dim, std::size_t heads, std::size_t pool,
                                  std::uint64_t base_seed) {
  if (seeds == 0 || pool == 0) throw ContractError("rank_augmentation_study: need seeds and a non-empty pool");
  if (n > attention::kMaxMaterializedN) throw ResourceError("rank_augmentation_study: N exceeds the rank guard");
  RankStudy st;
  st.n = n;
  st.dim = dim;
  st.heads = heads;
  st.pool = pool;
  Tape::Pause no_grad;
  for (std::size_t s = 0; s < seeds; ++s) {
    Rng rng(base_seed, 1000 + s);
    ModelConfig cfg;
    cfg.vocab_size = pool + 1;
    cfg.dim = dim;
    cfg.heads = heads;
    cfg.layers = 1;
    cfg.max_len = n;
    cfg.dropout = 0.0;
    cfg.drop_path = 0.0;
    GrelaModel model(cfg, rng);
    model.randomize(rng, 1.0 / std::sqrt(static_cast<double>(dim)));
    std::vector<std::int32_t> ids(n);
    for (auto& id : ids) id = static_cast<std::int32_t>(1 + rng.below(pool));
    std::vector<BlockTrace> traces;
    (void)model.encode(ids, 1, false, rng, &traces);
    const BlockTrace& tr = traces.front();
    const Tensor o = as_matrix(tr.attention, n, dim);
    const Tensor fused = as_matrix(tr.fused, n, dim);
    st.without_conv.push_back(rank_probe(o).rank);
    st.with_conv.push_back(rank_probe(fused).rank);
    const Tensor q = as_matrix(tr.q, n, dim), k = as_matrix(tr.k, n, dim);
    const std::size_t hd = dim / heads;
    std::size_t worst = 0;
    for (std::size_t h = 0; h < heads; ++h) {
      const Tensor a = attention::materialize_mixing_matrix(columns(q, h * hd, hd), columns(k, h * hd, hd),
                                                            attention::Variant::Linear);
      worst = std::max(worst, rank_probe(a).rank);
    }
    st.mixing_rank.push_back(worst);
    if (s + 1 == seeds) st.last_fused = fused;
  }
  auto med = [](const std::vector<std::size_t>& v) {
    return median(std::vector<double>(v.begin(), v.end()));
  };
  st.median_without = med(st.without_conv);
  st.median_with = med(st.with_conv);
  return st;
}

}  // namespace grela::bench
