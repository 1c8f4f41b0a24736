#include "grela/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>

#include "grela/error.hpp"

namespace grela {

PositionEncoding parse_position_encoding(std::string_view name) {
  if (name == "rope") return PositionEncoding::Rope;
  if (name == "ape") return PositionEncoding::Ape;
  if (name == "lpe") return PositionEncoding::Lpe;
  if (name == "none") return PositionEncoding::None;
  throw ContractError("unknown position encoding '" + std::string(name) + "' (expected rope, ape, lpe, none)");
}

std::string_view position_encoding_name(PositionEncoding p) noexcept {
  switch (p) {
    case PositionEncoding::Rope: return "rope";
    case PositionEncoding::Ape: return "ape";
    case PositionEncoding::Lpe: return "lpe";
    case PositionEncoding::None: return "none";
  }
  return "?";
}

attention::AttentionConfig ModelConfig::attention_config() const {
  attention::AttentionConfig a;
  a.variant = attention;
  a.heads = heads;
  a.head_dim = head_dim();
  a.causal = causal;
  a.eps = attn_eps;
  a.scale_n = scale_n;
  a.scale_len = max_len;
  return a;
}

std::vector<std::string> ModelConfig::problems() const {
  std::vector<std::string> p;
  if (dim == 0) p.push_back("dim must be positive");
  if (heads == 0) p.push_back("heads must be positive");
  if (heads != 0 && dim % heads != 0) p.push_back("dim must be divisible by heads");
  if (attention == attention::Variant::RELA && dim % 2 != 0) p.push_back("rela needs an even dim");
  if (layers == 0) p.push_back("layers must be at least 1");
  if (max_len == 0) p.push_back("max_len must be positive");
  if (conv_kernel == 0) p.push_back("conv_kernel must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) p.push_back("dropout must lie in [0, 1)");
  if (!(drop_path >= 0.0 && drop_path < 1.0)) p.push_back("drop_path must lie in [0, 1)");
  if (!(attn_eps > 0.0)) p.push_back("attn_eps must be positive");
  if (!(ln_eps > 0.0)) p.push_back("ln_eps must be positive");
  if (!(init_std > 0.0)) p.push_back("init_std must be positive");
  if (!(rope_base > 1.0)) p.push_back("rope_base must exceed 1");
  if (vocab_size == 1) p.push_back("vocab_size must leave room for at least one item");
  return p;
}

void ModelConfig::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::string msg;
  for (const auto& s : p) msg += (msg.empty() ? "" : "; ") + s;
  throw ConfigError(msg);
}

namespace {

struct MetricSpec {
  std::string name;
  std::size_t k;
};

std::optional<MetricSpec> parse_metric(std::string_view s) {
  const auto at = s.find('@');
  if (at == std::string_view::npos) return std::nullopt;
  MetricSpec m{std::string(s.substr(0, at)), 0};
  if (m.name != "hr" && m.name != "ndcg" && m.name != "mrr") return std::nullopt;
  const auto tail = s.substr(at + 1);
  auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), m.k);
  if (ec != std::errc() || ptr != tail.data() + tail.size() || m.k == 0) return std::nullopt;
  return m;
}

}  // namespace

std::vector<std::string> TrainConfig::problems() const {
  std::vector<std::string> p;
  if (!(learning_rate >= 0.0)) p.push_back("lr must be non-negative");
  if (batch_size == 0) p.push_back("batch_size must be positive");
  if (max_epochs == 0) p.push_back("max_epochs must be positive");
  if (patience == 0) p.push_back("patience must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) p.push_back("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) p.push_back("beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) p.push_back("adam_eps must be positive");
  if (!(grad_clip >= 0.0)) p.push_back("grad_clip must be non-negative");
  if (topk.empty()) p.push_back("topk must list at least one cutoff");
  for (auto k : topk)
    if (k == 0) p.push_back("topk cutoffs must be positive");
  const auto m = parse_metric(eval_metric);
  if (!m) p.push_back("eval_metric must look like hr@K, ndcg@K or mrr@K");
  else if (std::find(topk.begin(), topk.end(), m->k) == topk.end())
    p.push_back("eval_metric cutoff " + std::to_string(m->k) + " is not in topk");
  return p;
}

void TrainConfig::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::string msg;
  for (const auto& s : p) msg += (msg.empty() ? "" : "; ") + s;
  throw ConfigError(msg);
}

std::vector<std::string> RunConfig::problems() const {
  auto p = model.problems();
  for (auto& s : train.problems()) p.push_back(std::move(s));
  if (data.format != "tsv" && data.format != "csv") p.push_back("format must be tsv or csv");
  if (data.min_user == 0 || data.min_item == 0) p.push_back("min_user and min_item must be positive");
  if (out.empty()) p.push_back("out must name a directory");
  return p;
}

void RunConfig::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::string msg;
  for (const auto& s : p) msg += (msg.empty() ? "" : "; ") + s;
  throw ConfigError(msg);
}

// ---- schema ----------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

std::size_t to_size(std::string_view v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected a non-negative integer");
  return out;
}

std::uint64_t to_u64(std::string_view v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected an unsigned 64-bit integer");
  return out;
}

double to_double(std::string_view v) {
  const std::string s(v);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError("expected a number");
  }
  if (used != s.size()) throw ConfigError("expected a number");
  return out;
}

bool to_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("expected true or false");
}

// shortest text that parses back to the same double
std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

template <class F>
auto wrap_contract(F&& f) {
  try {
    return f();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
}

struct Entry {
  const char* key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define GRELA_SIZE(k, field) \
  Entry { k, [](RunConfig& c, std::string_view v) { c.field = to_size(v); }, [](const RunConfig& c) { return std::to_string(c.field); } }
#define GRELA_REAL(k, field) \
  Entry { k, [](RunConfig& c, std::string_view v) { c.field = to_double(v); }, [](const RunConfig& c) { return fmt_double(c.field); } }
#define GRELA_BOOL(k, field) \
  Entry { k, [](RunConfig& c, std::string_view v) { c.field = to_bool(v); }, [](const RunConfig& c) { return fmt_bool(c.field); } }
#define GRELA_TEXT(k, field) \
  Entry { k, [](RunConfig& c, std::string_view v) { c.field = std::string(v); }, [](const RunConfig& c) { return c.field; } }

const std::vector<Entry>& schema() {
  static const std::vector<Entry> entries = {
      GRELA_SIZE("vocab_size", model.vocab_size),
      GRELA_SIZE("dim", model.dim),
      GRELA_SIZE("heads", model.heads),
      GRELA_SIZE("layers", model.layers),
      GRELA_SIZE("max_len", model.max_len),
      GRELA_SIZE("conv_kernel", model.conv_kernel),
      GRELA_REAL("dropout", model.dropout),
      GRELA_REAL("drop_path", model.drop_path),
      GRELA_REAL("attn_eps", model.attn_eps),
      GRELA_BOOL("scale_n", model.scale_n),
      GRELA_REAL("ln_eps", model.ln_eps),
      GRELA_REAL("init_std", model.init_std),
      GRELA_REAL("rope_base", model.rope_base),
      Entry{"attention",
            [](RunConfig& c, std::string_view v) {
              c.model.attention = wrap_contract([&] { return attention::parse_variant(v); });
            },
            [](const RunConfig& c) { return std::string(attention::variant_name(c.model.attention)); }},
      GRELA_BOOL("causal", model.causal),
      Entry{"position",
            [](RunConfig& c, std::string_view v) {
              c.model.position = wrap_contract([&] { return parse_position_encoding(v); });
            },
            [](const RunConfig& c) { return std::string(position_encoding_name(c.model.position)); }},
      GRELA_BOOL("rank_augmentation", model.rank_augmentation),
      GRELA_BOOL("gate", model.gate),
      Entry{"gate_activation",
            [](RunConfig& c, std::string_view v) {
              c.model.gate_activation = wrap_contract([&] { return ops::parse_activation(v); });
            },
            [](const RunConfig& c) { return std::string(ops::activation_name(c.model.gate_activation)); }},
      Entry{"mlp_activation",
            [](RunConfig& c, std::string_view v) {
              c.model.mlp_activation = wrap_contract([&] { return ops::parse_activation(v); });
            },
            [](const RunConfig& c) { return std::string(ops::activation_name(c.model.mlp_activation)); }},
      GRELA_REAL("lr", train.learning_rate),
      GRELA_SIZE("batch_size", train.batch_size),
      GRELA_SIZE("max_epochs", train.max_epochs),
      GRELA_SIZE("patience", train.patience),
      GRELA_REAL("beta1", train.beta1),
      GRELA_REAL("beta2", train.beta2),
      GRELA_REAL("adam_eps", train.adam_eps),
      GRELA_REAL("grad_clip", train.grad_clip),
      Entry{"seed", [](RunConfig& c, std::string_view v) { c.train.seed = to_u64(v); },
            [](const RunConfig& c) { return c.train.seed ? std::to_string(*c.train.seed) : std::string(); }},
      GRELA_TEXT("eval_metric", train.eval_metric),
      Entry{"topk",
            [](RunConfig& c, std::string_view v) {
              std::vector<std::size_t> ks;
              std::string item;
              std::istringstream in{std::string(v)};
              while (std::getline(in, item, ',')) ks.push_back(to_size(trim(item)));
              c.train.topk = std::move(ks);
            },
            [](const RunConfig& c) {
              std::string s;
              for (auto k : c.train.topk) s += (s.empty() ? "" : ",") + std::to_string(k);
              return s;
            }},
      GRELA_BOOL("mask_seen", train.mask_seen),
      GRELA_TEXT("input", data.input),
      GRELA_TEXT("format", data.format),
      GRELA_TEXT("user_column", data.user_column),
      GRELA_TEXT("item_column", data.item_column),
      GRELA_TEXT("time_column", data.time_column),
      GRELA_SIZE("min_user", data.min_user),
      GRELA_SIZE("min_item", data.min_item),
      GRELA_BOOL("iterate_filter", data.iterate_filter),
      GRELA_TEXT("out", out),
  };
  return entries;
}

#undef GRELA_SIZE
#undef GRELA_REAL
#undef GRELA_BOOL
#undef GRELA_TEXT

const Entry* find_entry(std::string_view key) {
  for (const auto& e : schema())
    if (key == e.key) return &e;
  return nullptr;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& e : schema()) keys.emplace_back(e.key);
  return keys;
}

std::string env_name(std::string_view key) {
  std::string s = "GRELA_";
  for (char c : key) s += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  const Entry* e = find_entry(key);
  if (e == nullptr) throw ConfigError("unknown key '" + std::string(key) + "'");
  try {
    e->set(cfg, trim(value));
  } catch (const ConfigError& err) {
    throw ConfigError(std::string(key) + ": " + err.what() + ", got '" + trim(value) + "'");
  }
}

RunConfig parse_config(std::string_view text, RunConfig cfg) {
  std::vector<std::string> errors;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      errors.push_back("line " + std::to_string(lineno) + ": expected 'key = value'");
      continue;
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      errors.push_back("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  for (auto& p : cfg.problems()) errors.push_back(std::move(p));
  if (!errors.empty()) {
    std::string msg = std::to_string(errors.size()) + " problem(s)";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return cfg;
}

RunConfig load_config(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), std::move(base));
}

void apply_env_overrides(RunConfig& cfg, const std::function<const char*(const char*)>& getenv) {
  std::vector<std::string> errors;
  for (const auto& e : schema()) {
    const std::string name = env_name(e.key);
    const char* v = getenv(name.c_str());
    if (v == nullptr) continue;
    try {
      set_config_value(cfg, e.key, v);
    } catch (const ConfigError& err) {
      errors.push_back(name + ": " + err.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = std::to_string(errors.size()) + " problem(s) in environment overrides";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

std::string config_to_text(const RunConfig& cfg) {
  std::string s;
  for (const auto& e : schema()) {
    const std::string v = e.get(cfg);
    if (v.empty() && std::string_view(e.key) == "seed") continue;
    s += std::string(e.key) + " = " + v + "\n";
  }
  return s;
}

}  // namespace grela
