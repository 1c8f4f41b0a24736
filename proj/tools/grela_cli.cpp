// grela: prepare / train / eval / bench / rank / config

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "grela/bench.hpp"
#include "grela/checkpoint.hpp"
#include "grela/config.hpp"
#include "grela/data.hpp"
#include "grela/error.hpp"
#include "grela/kernels.hpp"
#include "grela/linalg.hpp"
#include "grela/model.hpp"
#include "grela/training.hpp"

namespace fs = std::filesystem;
using namespace grela;

namespace {

constexpr const char* kVersion = "0.1.0";

std::vector<std::size_t> parse_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(tok, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != tok.size() || tok[0] == '-') throw ConfigError("not a non-negative integer in list: '" + tok + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw ConfigError("empty value list");
  return out;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

fs::path ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
  return fs::path(dir);
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, const std::optional<std::uint64_t>& config) {
  if (flag) return *flag;
  if (config) return *config;
  std::random_device rd;
  const std::uint64_t s = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  std::cout << "seed: " << s << " (drawn; pass --seed " << s << " to repeat)\n";
  return s;
}

std::string timestamp_utc() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string manifest_text(const std::string& command, std::uint64_t seed, const RunConfig& cfg, double wall,
                          const std::vector<std::pair<std::string, std::string>>& extra) {
  std::ostringstream os;
  os << "command = " << command << "\n";
  os << "seed = " << seed << "\n";
  os << "grela_version = " << kVersion << "\n";
  os << "checkpoint_format = " << kCheckpointVersion << "\n";
  os << "compiler = " << __VERSION__ << "\n";
  os << "isa = " << kernels::isa_name(kernels::active_isa()) << "\n";
  os << "finished = " << timestamp_utc() << "\n";
  os << "wall_seconds = " << wall << "\n";
  for (const auto& [k, v] : extra) os << k << " = " << v << "\n";
  os << "\n[config]\n" << config_to_text(cfg);
  return os.str();
}

void print_long_term(const ModelConfig& m) {
  std::cout << "long-term: " << (m.long_term() ? "yes" : "no") << " (max_len " << m.max_len << " vs 1.5 x dim "
            << 1.5 * static_cast<double>(m.dim) << ")\n";
}

RunConfig assemble_config(const std::string& path, const std::vector<std::string>& sets) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_config(path);
  apply_env_overrides(cfg, [](const char* k) { return std::getenv(k); });
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

data::InteractionDataset dataset_from(const std::string& cache, const RunConfig& cfg) {
  if (!cache.empty()) return data::load_dataset(cache);
  if (cfg.data.input.empty()) throw ConfigError("no dataset: pass --data or set input in the config");
  data::LoadOptions lo;
  lo.format = cfg.data.format;
  lo.user_column = cfg.data.user_column;
  lo.item_column = cfg.data.item_column;
  lo.time_column = cfg.data.time_column;
  const auto records = data::load_interactions(cfg.data.input, lo);
  data::BuildOptions bo;
  bo.min_user = cfg.data.min_user;
  bo.min_item = cfg.data.min_item;
  bo.max_len = cfg.model.max_len;
  bo.iterate_filter = cfg.data.iterate_filter;
  return data::build_dataset(records, bo);
}

// ---- prepare

struct PrepareArgs {
  std::string input, format = "tsv", out = "data", name = "dataset";
  std::string user_column = "user_id", item_column = "item_id", time_column = "timestamp";
  std::size_t min_user = 5, min_item = 5, max_len = 200;
  bool one_pass = false;
  bool synthetic = false;
  std::size_t synth_users = 500, synth_vocab = 10, synth_min = 8, synth_max = 20;
  double sharpness = 1.0;
  std::optional<std::uint64_t> seed;
};

int cmd_prepare(const PrepareArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  data::InteractionDataset ds;
  std::uint64_t seed = 0;
  if (a.synthetic) {
    seed = resolve_seed(a.seed, std::nullopt);
    data::SynthOptions so;
    so.num_users = a.synth_users;
    so.vocab = a.synth_vocab;
    so.sharpness = a.sharpness;
    so.min_length = a.synth_min;
    so.max_length = a.synth_max;
    so.max_len = a.max_len;
    so.seed = seed;
    ds = data::synth_markov(so);
  } else {
    if (a.input.empty()) throw ConfigError("prepare: --input or --synthetic is required");
    data::LoadOptions lo;
    lo.format = a.format;
    lo.user_column = a.user_column;
    lo.item_column = a.item_column;
    lo.time_column = a.time_column;
    data::LoadReport rep;
    const auto records = data::load_interactions(a.input, lo, &rep);
    if (rep.malformed)
      std::cerr << "warning: skipped " << rep.malformed << " malformed row(s) of " << rep.rows << " in " << a.input
                << "\n";
    data::BuildOptions bo;
    bo.min_user = a.min_user;
    bo.min_item = a.min_item;
    bo.max_len = a.max_len;
    bo.iterate_filter = !a.one_pass;
    ds = data::build_dataset(records, bo);
  }
  const fs::path dir = ensure_dir(a.out);
  data::save_dataset(ds, (dir / "dataset.cache").string());
  const std::string table = data::format_stats_table(data::compute_stats(ds), a.name);
  write_file(dir / "stats.tsv", table);
  std::cout << table;
  if (ds.markov)
    std::cout << "bayes HR@1 " << ds.markov->bayes_hit_rate(1) << "  HR@10 " << ds.markov->bayes_hit_rate(10) << "\n";
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  RunConfig echo;
  echo.data.input = a.input;
  echo.data.format = a.format;
  echo.data.user_column = a.user_column;
  echo.data.item_column = a.item_column;
  echo.data.time_column = a.time_column;
  echo.data.min_user = a.min_user;
  echo.data.min_item = a.min_item;
  echo.data.iterate_filter = !a.one_pass;
  echo.model.max_len = a.max_len;
  echo.out = a.out;
  std::vector<std::pair<std::string, std::string>> extra{{"synthetic", a.synthetic ? "true" : "false"}};
  if (a.synthetic) {
    extra.emplace_back("synth_users", std::to_string(a.synth_users));
    extra.emplace_back("synth_vocab", std::to_string(a.synth_vocab));
    extra.emplace_back("synth_sharpness", std::to_string(a.sharpness));
    extra.emplace_back("synth_lengths", std::to_string(a.synth_min) + ".." + std::to_string(a.synth_max));
  }
  write_file(dir / "manifest.txt", manifest_text("prepare", seed, echo, wall, extra));
  std::cout << "wrote " << (dir / "dataset.cache").string() << "\n";
  return 0;
}

// ---- train

// "runs/ml-1m/dataset.cache" -> "ml-1m"
std::string dataset_label(const std::string& path) {
  const fs::path p(path);
  if (p.filename() == "dataset.cache" && p.has_parent_path()) return p.parent_path().filename().string();
  return p.stem().string();
}

struct TrainArgs {
  std::string config, data, out;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = assemble_config(a.config, a.sets);
  if (!a.out.empty()) cfg.out = a.out;
  const auto ds = dataset_from(a.data, cfg);
  if (cfg.model.vocab_size == 0) cfg.model.vocab_size = ds.vocab_size();
  if (cfg.model.vocab_size != ds.vocab_size())
    throw ConfigError("vocab_size " + std::to_string(cfg.model.vocab_size) + " does not match the dataset's " +
                      std::to_string(ds.vocab_size()));
  if (ds.max_len < cfg.model.max_len) {
    std::cout << "max_len " << cfg.model.max_len << " narrowed to the dataset window " << ds.max_len << "\n";
    cfg.model.max_len = ds.max_len;
  }
  if (ds.max_len > cfg.model.max_len)
    throw ConfigError("dataset window " + std::to_string(ds.max_len) + " exceeds model max_len " +
                      std::to_string(cfg.model.max_len));
  cfg.validate();
  const std::uint64_t seed = resolve_seed(a.seed, cfg.train.seed);
  cfg.train.seed = seed;
  print_long_term(cfg.model);

  const fs::path dir = ensure_dir(cfg.out);
  std::ofstream metrics(dir / "metrics.jsonl");
  if (!metrics) throw IoError("cannot write " + (dir / "metrics.jsonl").string());

  Rng init(seed, 0x494e4954);
  GrelaModel model(cfg.model, init);
  std::cout << "parameters: " << model.parameter_count() << "\n";
  training::TrainHooks hooks;
  hooks.metrics_log = &metrics;
  hooks.checkpoint_path = (dir / "checkpoint.grela").string();
  hooks.run = &cfg;
  hooks.verbose = !a.quiet;
  const auto res = training::train(model, ds, cfg.train, seed, hooks);
  save_checkpoint(hooks.checkpoint_path, model, cfg, seed,
                  {{"best_epoch", std::to_string(res.best_epoch)}, {"stop_reason", res.stop_reason}});

  const std::string table = training::format_report_table(res.test, dataset_label(a.data.empty() ? cfg.data.input : a.data),
                                                          std::string(attention::variant_name(cfg.model.attention)));
  write_file(dir / "report.tsv", table);
  std::cout << table;
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_file(dir / "manifest.txt",
             manifest_text("train", seed, cfg, wall,
                           {{"data", a.data.empty() ? cfg.data.input : a.data},
                            {"epochs_run", std::to_string(res.epochs_run)},
                            {"best_epoch", std::to_string(res.best_epoch)},
                            {"stop_reason", res.stop_reason},
                            {"diverged", res.diverged ? "true" : "false"}}));
  std::cout << "stopped: " << res.stop_reason << "; best epoch " << res.best_epoch << "\n";
  return res.diverged ? 3 : 0;
}

// ---- eval

struct EvalArgs {
  std::string checkpoint, data, split = "test", out;
  bool mask_seen = false;
};

int cmd_eval(const EvalArgs& a) {
  const auto ck = read_checkpoint(a.checkpoint);
  const GrelaModel model = restore_model(ck);
  const auto ds = dataset_from(a.data, ck.config);
  if (ds.vocab_size() != ck.config.model.vocab_size)
    throw ConfigError("dataset vocabulary " + std::to_string(ds.vocab_size()) + " does not match the checkpoint's " +
                      std::to_string(ck.config.model.vocab_size));
  training::EvalOptions eo;
  eo.topk = ck.config.train.topk;
  eo.mask_seen = a.mask_seen || ck.config.train.mask_seen;
  const auto rep = training::evaluate(model, ds, data::parse_split(a.split), eo);
  const std::string table = training::format_report_table(rep, dataset_label(a.data.empty() ? ck.config.data.input : a.data),
                                                          std::string(attention::variant_name(ck.config.model.attention)));
  std::cout << table << rep.to_json() << "\n";
  if (!a.out.empty()) {
    const fs::path dir = ensure_dir(a.out);
    write_file(dir / "report.tsv", table);
    write_file(dir / "metrics.jsonl", rep.to_json() + "\n");
  }
  return 0;
}

// ---- bench

struct BenchArgs {
  std::string variant = "rela", axis = "N", values, out;
  bench::SweepOptions opt;
  bool f32 = false;
  std::optional<std::uint64_t> seed;
};

int cmd_bench(BenchArgs a) {
  a.opt.variant = attention::parse_variant(a.variant);
  a.opt.axis = a.axis;
  a.opt.single_precision = a.f32;
  if (a.values.empty()) {
    if (a.axis == "N") a.values = "128,256,512,1024,2048,4096";
    else if (a.axis == "L") a.values = "1,2,3,4";
    else a.values = "1,2,4,8";
  }
  a.opt.values = parse_list(a.values);
  a.opt.seed = resolve_seed(a.seed, std::nullopt);
  const auto rep = bench::runtime_sweep(a.opt);
  std::cout << rep.to_tsv();
  if (!a.out.empty()) {
    const fs::path dir = ensure_dir(a.out);
    write_file(dir / "bench.tsv", rep.to_tsv());
    write_file(dir / "bench.jsonl", rep.to_jsonl());
  }
  return 0;
}

// ---- rank

struct RankArgs {
  std::string checkpoint, out;
  bool random = false;
  std::size_t n = 200, d = 64, heads = 4, seeds = 20, pool = 8;
  std::optional<std::uint64_t> seed;
};

int cmd_rank(const RankArgs& a) {
  if (a.random == !a.checkpoint.empty()) throw ConfigError("rank: pass exactly one of --checkpoint or --random");
  const std::uint64_t seed = resolve_seed(a.seed, std::nullopt);
  std::ostringstream tsv;
  Tensor heat;
  if (a.random) {
    const auto st = bench::rank_augmentation_study(a.seeds, a.n, a.d, a.heads, a.pool, seed);
    tsv << "seed\trank_without_conv\trank_with_conv\tmax_head_mixing_rank\n";
    for (std::size_t i = 0; i < st.with_conv.size(); ++i)
      tsv << i << '\t' << st.without_conv[i] << '\t' << st.with_conv[i] << '\t' << st.mixing_rank[i] << '\n';
    tsv << "# median\t" << st.median_without << '\t' << st.median_with << "\n# head_dim\t" << a.d / a.heads << '\n';
    heat = st.last_fused;
  } else {
    const auto ck = read_checkpoint(a.checkpoint);
    const GrelaModel model = restore_model(ck);
    const auto& mc = ck.config.model;
    const std::size_t n = std::min(a.n, mc.max_len);
    Rng rng(seed, 0x52414e4b);
    std::vector<std::int32_t> ids(n);
    for (auto& id : ids) id = static_cast<std::int32_t>(1 + rng.below(mc.vocab_size - 1));
    std::vector<BlockTrace> traces;
    (void)model.encode(ids, 1, false, rng, &traces);
    tsv << "layer\trank_attention\trank_fused\tsigma_1\n";
    for (std::size_t l = 0; l < traces.size(); ++l) {
      const Tensor o(Shape{n, mc.dim}, traces[l].attention.data());
      const Tensor f(Shape{n, mc.dim}, traces[l].fused.data());
      const auto po = bench::rank_probe(o), pf = bench::rank_probe(f);
      tsv << l << '\t' << po.rank << '\t' << pf.rank << '\t'
          << (pf.singular_values.empty() ? 0.0 : pf.singular_values.front()) << '\n';
      heat = f;
    }
  }
  std::cout << tsv.str();
  if (!a.out.empty()) {
    const fs::path dir = ensure_dir(a.out);
    write_file(dir / "rank.tsv", tsv.str());
    write_file(dir / "heatmap.txt", bench::heatmap_grid(heat));
  }
  return 0;
}

// ---- config

struct ConfigArgs {
  std::string validate;
  bool keys = false;
};

int cmd_config(const ConfigArgs& a) {
  if (!a.validate.empty()) {
    RunConfig cfg = load_config(a.validate);
    apply_env_overrides(cfg, [](const char* k) { return std::getenv(k); });
    cfg.validate();
    std::cout << "ok\n";
    print_long_term(cfg.model);
    return 0;
  }
  if (a.keys) {
    for (const auto& k : config_keys()) std::cout << k << '\t' << env_name(k) << '\n';
    return 0;
  }
  std::cout << config_to_text(RunConfig{});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grela: sequential recommendation with gated rotary linear attention"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  PrepareArgs pa;
  auto* prep = app.add_subcommand("prepare", "filter raw interactions (or synthesize) and cache a dataset");
  prep->add_option("--input", pa.input, "interaction file");
  prep->add_option("--format", pa.format, "tsv or csv")->capture_default_str();
  prep->add_option("--user-column", pa.user_column)->capture_default_str();
  prep->add_option("--item-column", pa.item_column)->capture_default_str();
  prep->add_option("--time-column", pa.time_column)->capture_default_str();
  prep->add_option("--min-user", pa.min_user)->capture_default_str();
  prep->add_option("--min-item", pa.min_item)->capture_default_str();
  prep->add_option("--max-len", pa.max_len)->capture_default_str();
  prep->add_flag("--one-pass", pa.one_pass, "single filtering pass instead of iterating to a fixed point");
  prep->add_option("--out", pa.out, "output directory")->capture_default_str();
  prep->add_option("--name", pa.name, "dataset name in the stats table")->capture_default_str();
  prep->add_flag("--synthetic", pa.synthetic, "generate a Markov-chain corpus instead of reading --input");
  prep->add_option("--users", pa.synth_users)->capture_default_str();
  prep->add_option("--vocab", pa.synth_vocab)->capture_default_str();
  prep->add_option("--sharpness", pa.sharpness, "probability of the successor item")->capture_default_str();
  prep->add_option("--min-length", pa.synth_min)->capture_default_str();
  prep->add_option("--max-length", pa.synth_max)->capture_default_str();
  prep->add_option("--seed", pa.seed);

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train a model and write a run directory");
  tr->add_option("--config", ta.config, "key = value config file");
  tr->add_option("--data", ta.data, "dataset.cache from prepare");
  tr->add_option("--out", ta.out, "run directory (overrides the config's out)");
  tr->add_option("--set", ta.sets, "config override key=value (repeatable)");
  tr->add_option("--seed", ta.seed);
  tr->add_flag("--quiet", ta.quiet);

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  ev->add_option("--checkpoint", ea.checkpoint)->required();
  ev->add_option("--data", ea.data, "dataset.cache (defaults to the checkpoint's input)");
  ev->add_option("--split", ea.split, "train, valid or test")->capture_default_str();
  ev->add_option("--out", ea.out);
  ev->add_flag("--mask-seen", ea.mask_seen);

  BenchArgs ba;
  auto* be = app.add_subcommand("bench", "runtime and memory sweep");
  be->add_option("--variant", ba.variant, "rela, linear or dot")->capture_default_str();
  be->add_option("--axis", ba.axis, "N, L or h")->capture_default_str();
  be->add_option("--values", ba.values, "comma-separated sweep values");
  be->add_option("--repeats", ba.opt.repeats)->capture_default_str();
  be->add_option("--warmup", ba.opt.warmup)->capture_default_str();
  be->add_option("--n", ba.opt.n, "sequence length for L/h sweeps")->capture_default_str();
  be->add_option("--dim", ba.opt.dim)->capture_default_str();
  be->add_option("--heads", ba.opt.heads)->capture_default_str();
  be->add_option("--layers", ba.opt.layers)->capture_default_str();
  be->add_flag("!--full", ba.opt.causal, "non-causal attention");
  be->add_flag("--f32", ba.f32, "single precision kernels (N axis)");
  be->add_option("--memory-limit", ba.opt.memory_limit_bytes, "bytes of scratch before a point is reported OOM")
      ->capture_default_str();
  be->add_option("--out", ba.out);
  be->add_option("--seed", ba.seed);

  RankArgs ra;
  auto* rk = app.add_subcommand("rank", "numerical rank of attention outputs");
  rk->add_option("--checkpoint", ra.checkpoint);
  rk->add_flag("--random", ra.random, "randomly initialized single block over a small item pool");
  rk->add_option("--n", ra.n)->capture_default_str();
  rk->add_option("--d", ra.d, "model dimension")->capture_default_str();
  rk->add_option("--heads", ra.heads)->capture_default_str();
  rk->add_option("--seeds", ra.seeds)->capture_default_str();
  rk->add_option("--pool", ra.pool)->capture_default_str();
  rk->add_option("--out", ra.out);
  rk->add_option("--seed", ra.seed);

  ConfigArgs ca;
  auto* cf = app.add_subcommand("config", "print defaults, list keys, or validate a file");
  cf->add_option("--validate", ca.validate);
  cf->add_flag("--keys", ca.keys, "list keys with their environment variable names");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*prep) return cmd_prepare(pa);
    if (*tr) return cmd_train(ta);
    if (*ev) return cmd_eval(ea);
    if (*be) return cmd_bench(ba);
    if (*rk) return cmd_rank(ra);
    if (*cf) return cmd_config(ca);
  } catch (const Error& e) {
    std::string msg = e.what();
    const auto nl = msg.find('\n');
    std::cerr << "error: " << e.error_class() << ": " << msg.substr(0, nl) << "\n";
    if (nl != std::string::npos) std::cerr << msg.substr(nl + 1) << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
