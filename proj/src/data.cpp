#include "grela/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "grela/error.hpp"

namespace grela::data {

namespace {

std::vector<std::string> split_fields(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (delim == ',' && c == '"') {
      if (quoted && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else {
        quoted = !quoted;
      }
    } else if (c == delim && !quoted) {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string column_name(const std::string& header) {
  const auto colon = header.find(':');
  std::string s = colon == std::string::npos ? header : header.substr(0, colon);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
  return s;
}

bool parse_timestamp(const std::string& s, std::int64_t& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || !std::isfinite(v)) return false;
  out = static_cast<std::int64_t>(std::llround(v));
  return true;
}

}  // namespace

std::vector<InteractionRecord> parse_interactions(std::istream& in, const LoadOptions& opt, LoadReport* report,
                                                  const std::string& source) {
  if (opt.format != "tsv" && opt.format != "csv")
    throw FormatError(source + ": unknown format '" + opt.format + "' (expected tsv or csv)");
  const char delim = opt.format == "csv" ? ',' : '\t';
  std::string line;
  if (!std::getline(in, line)) throw FormatError(source + ": missing header line");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_fields(line, delim);
  std::vector<std::string> names;
  for (const auto& h : header) names.push_back(column_name(h));
  auto find_col = [&](const std::string& want) -> std::size_t {
    const auto it = std::find(names.begin(), names.end(), want);
    if (it == names.end()) {
      std::string avail;
      for (const auto& n : names) avail += (avail.empty() ? "" : ", ") + n;
      throw FormatError(source + ":1: no column '" + want + "'; available columns: " + avail);
    }
    return static_cast<std::size_t>(it - names.begin());
  };
  const std::size_t cu = find_col(opt.user_column);
  const std::size_t ci = find_col(opt.item_column);
  const std::size_t ct = find_col(opt.time_column);

  LoadReport rep;
  std::vector<InteractionRecord> records;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++rep.rows;
    const auto f = split_fields(line, delim);
    InteractionRecord r;
    const bool ok = f.size() == header.size() && !f[cu].empty() && !f[ci].empty() &&
                    parse_timestamp(f[ct], r.timestamp);
    if (!ok) {
      ++rep.malformed;
      if (rep.malformed_lines.size() < 10) rep.malformed_lines.push_back(lineno);
      continue;
    }
    r.user = f[cu];
    r.item = f[ci];
    records.push_back(std::move(r));
  }
  if (report) *report = rep;
  if (rep.rows > 0 && static_cast<double>(rep.malformed) > opt.max_malformed_fraction * static_cast<double>(rep.rows)) {
    std::string where;
    for (auto l : rep.malformed_lines) where += (where.empty() ? "" : ", ") + std::to_string(l);
    throw DataError("malformed-input", source + ": " + std::to_string(rep.malformed) + " of " +
                                           std::to_string(rep.rows) + " rows malformed (lines " + where + ")");
  }
  return records;
}

std::vector<InteractionRecord> load_interactions(const std::string& path, const LoadOptions& opt, LoadReport* report) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read interaction file '" + path + "'");
  return parse_interactions(in, opt, report, path);
}

std::int32_t MarkovInfo::next(std::int32_t current, Rng& rng) const {
  if (current <= 0 || static_cast<std::size_t>(current) >= successor.size())
    throw BoundsError("markov: item " + std::to_string(current) + " outside vocabulary");
  if (rng.uniform() < sharpness) return successor[static_cast<std::size_t>(current)];
  return static_cast<std::int32_t>(1 + rng.below(vocab()));
}

double MarkovInfo::bayes_hit_rate(std::size_t k) const {
  const double v = static_cast<double>(vocab());
  const double kk = std::min(static_cast<double>(k), v);
  return sharpness + (1.0 - sharpness) * kk / v;
}

InteractionDataset build_dataset(const std::vector<InteractionRecord>& records, const BuildOptions& opt) {
  if (opt.max_len == 0) throw ContractError("build_dataset: max_len must be positive");
  std::vector<char> keep(records.size(), 1);
  for (;;) {
    std::unordered_map<std::string, std::size_t> ucount, icount;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (keep[i]) {
        ++ucount[records[i].user];
        ++icount[records[i].item];
      }
    bool changed = false;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (keep[i] && (ucount[records[i].user] < opt.min_user || icount[records[i].item] < opt.min_item)) {
        keep[i] = 0;
        changed = true;
      }
    if (!changed || !opt.iterate_filter) break;
  }

  InteractionDataset ds;
  ds.max_len = opt.max_len;
  ds.item_tokens.push_back("[PAD]");
  std::unordered_map<std::string, std::int32_t> item_id;
  std::unordered_map<std::string, std::size_t> user_index;
  std::vector<std::vector<std::size_t>> per_user;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!keep[i]) continue;
    const auto& r = records[i];
    if (!item_id.count(r.item)) {
      item_id[r.item] = static_cast<std::int32_t>(ds.item_tokens.size());
      ds.item_tokens.push_back(r.item);
    }
    auto [it, fresh] = user_index.try_emplace(r.user, ds.user_tokens.size());
    if (fresh) {
      ds.user_tokens.push_back(r.user);
      per_user.emplace_back();
    }
    per_user[it->second].push_back(i);
    ++ds.interactions;
  }
  if (ds.user_tokens.empty()) throw DataError("empty-dataset", "build_dataset: every user was filtered out");

  for (auto& idx : per_user) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return records[a].timestamp < records[b].timestamp; });
    const std::size_t start = idx.size() > opt.max_len ? idx.size() - opt.max_len : 0;
    std::vector<std::int32_t> seq;
    for (std::size_t j = start; j < idx.size(); ++j) seq.push_back(item_id[records[idx[j]].item]);
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

DatasetStats compute_stats(const InteractionDataset& ds) {
  DatasetStats s;
  s.users = ds.num_users();
  s.items = ds.num_items();
  s.interactions = ds.interactions;
  if (s.users) s.avg_user_actions = static_cast<double>(s.interactions) / static_cast<double>(s.users);
  if (s.items) s.avg_item_actions = static_cast<double>(s.interactions) / static_cast<double>(s.items);
  if (s.users && s.items)
    s.sparsity = 1.0 - static_cast<double>(s.interactions) / (static_cast<double>(s.users) * static_cast<double>(s.items));
  return s;
}

namespace {

std::string grouped(std::size_t v) {
  std::string s = std::to_string(v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

}  // namespace

std::string format_stats_table(const DatasetStats& s, const std::string& name) {
  std::ostringstream os;
  os << "Dataset\t#Users\t#Items\t#Interactions\tAvg. UA\tAvg. IA\tSparsity\n";
  os << name << '\t' << grouped(s.users + 1) << '\t' << grouped(s.items + 1) << '\t' << grouped(s.interactions) << '\t'
     << std::fixed << std::setprecision(1) << s.avg_user_actions << '\t' << s.avg_item_actions << '\t'
     << std::setprecision(2) << std::floor(s.sparsity * 1e4 + 1e-9) / 100.0 << "%\n";
  return os.str();
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "valid") return Split::Valid;
  if (name == "test") return Split::Test;
  throw ContractError("unknown split '" + std::string(name) + "' (expected train, valid, test)");
}

std::string_view split_name(Split s) noexcept {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

std::vector<Example> examples(const InteractionDataset& ds, Split split) {
  std::vector<Example> out;
  for (std::size_t u = 0; u < ds.sequences.size(); ++u) {
    const auto& s = ds.sequences[u];
    const std::size_t t = s.size();
    auto add = [&](std::size_t len) {
      out.push_back({static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(len), s[len]});
    };
    switch (split) {
      case Split::Test:
        if (t >= 2) add(t - 1);
        break;
      case Split::Valid:
        if (t >= 3) add(t - 2);
        break;
      case Split::Train:
        for (std::size_t len = 1; len + 2 < t; ++len) add(len);
        break;
    }
  }
  return out;
}

BatchSampler::BatchSampler(const InteractionDataset& ds, Split split, std::size_t batch_size,
                           std::optional<std::uint64_t> shuffle_seed)
    : ds_(&ds), examples_(examples(ds, split)), batch_size_(batch_size) {
  if (batch_size == 0) throw ContractError("make_batches: batch size must be positive");
  if (shuffle_seed) {
    Rng rng(*shuffle_seed, 0x5348554646ull);
    for (std::size_t i = examples_.size(); i > 1; --i) std::swap(examples_[i - 1], examples_[rng.below(i)]);
  }
}

Batch BatchSampler::batch(std::size_t index) const {
  if (index >= size()) throw BoundsError("batch index " + std::to_string(index) + " >= " + std::to_string(size()));
  const std::size_t first = index * batch_size_;
  const std::size_t last = std::min(first + batch_size_, examples_.size());
  Batch b;
  b.size = last - first;
  b.width = ds_->max_len;
  b.ids.assign(b.size * b.width, 0);
  for (std::size_t r = 0; r < b.size; ++r) {
    const Example& e = examples_[first + r];
    const auto& seq = ds_->sequences[e.user];
    const std::size_t take = std::min<std::size_t>(e.length, b.width);
    std::copy(seq.begin() + (e.length - take), seq.begin() + e.length, b.ids.begin() + (r + 1) * b.width - take);
    b.targets.push_back(e.target);
    b.users.push_back(e.user);
  }
  return b;
}

std::vector<Batch> make_batches(const InteractionDataset& ds, Split split, std::size_t batch_size,
                                std::optional<std::uint64_t> shuffle_seed) {
  BatchSampler sampler(ds, split, batch_size, shuffle_seed);
  std::vector<Batch> out;
  for (std::size_t i = 0; i < sampler.size(); ++i) out.push_back(sampler.batch(i));
  return out;
}

InteractionDataset synth_markov(const SynthOptions& opt) {
  if (opt.vocab < 2) throw ContractError("synth_markov: vocab must be at least 2");
  if (!(opt.sharpness >= 0.0 && opt.sharpness <= 1.0)) throw ContractError("synth_markov: sharpness must lie in [0, 1]");
  if (opt.min_length < 3 || opt.max_length < opt.min_length)
    throw ContractError("synth_markov: need 3 <= min_length <= max_length");
  Rng rng(opt.seed, 0x4d41524b4f56ull);

  MarkovInfo m;
  m.sharpness = opt.sharpness;
  std::vector<std::int32_t> order(opt.vocab);
  std::iota(order.begin(), order.end(), 1);
  // Sattolo's shuffle yields a uniformly random single cycle.
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i)]);
  m.successor.assign(opt.vocab + 1, 0);
  for (std::size_t i = 0; i < order.size(); ++i) m.successor[static_cast<std::size_t>(order[i])] = order[(i + 1) % order.size()];

  InteractionDataset ds;
  ds.max_len = opt.max_len;
  ds.item_tokens.push_back("[PAD]");
  for (std::size_t i = 1; i <= opt.vocab; ++i) ds.item_tokens.push_back("i" + std::to_string(i));
  for (std::size_t u = 0; u < opt.num_users; ++u) {
    const std::size_t len = opt.min_length + rng.below(opt.max_length - opt.min_length + 1);
    std::vector<std::int32_t> seq;
    std::int32_t cur = static_cast<std::int32_t>(1 + rng.below(opt.vocab));
    seq.push_back(cur);
    while (seq.size() < len) seq.push_back(cur = m.next(cur, rng));
    ds.interactions += seq.size();
    if (seq.size() > opt.max_len) seq.erase(seq.begin(), seq.end() - static_cast<std::ptrdiff_t>(opt.max_len));
    ds.user_tokens.push_back("u" + std::to_string(u));
    ds.sequences.push_back(std::move(seq));
  }
  ds.markov = std::move(m);
  return ds;
}

// ---- cache -----------------------------------------------------------------

namespace {

constexpr const char* kCacheMagic = "GRELA-DATASET";
constexpr int kCacheVersion = 1;

std::string escape(const std::string& s) {
  if (s.empty()) return "%";
  std::string out;
  for (char c : s) {
    if (c == '%' || c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      static const char* hex = "0123456789ABCDEF";
      out += '%';
      out += hex[(static_cast<unsigned char>(c) >> 4) & 15];
      out += hex[static_cast<unsigned char>(c) & 15];
    } else {
      out += c;
    }
  }
  return out;
}

std::string unescape(const std::string& s) {
  if (s == "%") return "";
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%' && i + 2 < s.size()) {
      out += static_cast<char>(std::stoi(s.substr(i + 1, 2), nullptr, 16));
      i += 2;
    } else if (s[i] == '%') {
      throw FormatError("dataset cache: bad escape in '" + s + "'");
    } else {
      out += s[i];
    }
  }
  return out;
}

template <class T>
T expect(std::istream& in, const char* what) {
  std::string key;
  T value{};
  in >> key >> value;
  if (!in || key != what) throw FormatError(std::string("dataset cache: expected '") + what + "'");
  return value;
}

}  // namespace

void save_dataset(const InteractionDataset& ds, std::ostream& out) {
  out << kCacheMagic << ' ' << kCacheVersion << '\n';
  out << "max_len " << ds.max_len << '\n';
  out << "interactions " << ds.interactions << '\n';
  out << "items " << ds.num_items() << '\n';
  for (std::size_t i = 1; i < ds.item_tokens.size(); ++i) out << escape(ds.item_tokens[i]) << '\n';
  out << "users " << ds.num_users() << '\n';
  for (std::size_t u = 0; u < ds.num_users(); ++u) {
    const auto& s = ds.sequences[u];
    out << escape(ds.user_tokens[u]) << ' ' << s.size();
    std::int64_t prev = 0;
    for (auto id : s) {
      out << ' ' << (static_cast<std::int64_t>(id) - prev);
      prev = id;
    }
    out << '\n';
  }
  if (ds.markov) {
    std::ostringstream sh;
    sh.precision(17);
    sh << ds.markov->sharpness;
    out << "markov " << sh.str() << ' ' << ds.markov->vocab();
    for (std::size_t i = 1; i < ds.markov->successor.size(); ++i) out << ' ' << ds.markov->successor[i];
    out << '\n';
  }
  out << "end\n";
  if (!out) throw IoError("dataset cache: write failed");
}

InteractionDataset load_dataset(std::istream& in) {
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kCacheMagic) throw FormatError("dataset cache: bad magic");
  if (version != kCacheVersion) throw FormatError("dataset cache: unsupported version " + std::to_string(version));
  InteractionDataset ds;
  ds.max_len = expect<std::size_t>(in, "max_len");
  ds.interactions = expect<std::size_t>(in, "interactions");
  const auto items = expect<std::size_t>(in, "items");
  ds.item_tokens.push_back("[PAD]");
  for (std::size_t i = 0; i < items; ++i) {
    std::string tok;
    if (!(in >> tok)) throw FormatError("dataset cache: truncated item table");
    ds.item_tokens.push_back(unescape(tok));
  }
  const auto users = expect<std::size_t>(in, "users");
  for (std::size_t u = 0; u < users; ++u) {
    std::string tok;
    std::size_t len = 0;
    if (!(in >> tok >> len)) throw FormatError("dataset cache: truncated user table");
    std::vector<std::int32_t> seq(len);
    std::int64_t prev = 0;
    for (auto& id : seq) {
      std::int64_t delta = 0;
      if (!(in >> delta)) throw FormatError("dataset cache: truncated sequence for " + tok);
      prev += delta;
      if (prev <= 0 || static_cast<std::size_t>(prev) > items)
        throw FormatError("dataset cache: item id out of range for " + tok);
      id = static_cast<std::int32_t>(prev);
    }
    ds.user_tokens.push_back(unescape(tok));
    ds.sequences.push_back(std::move(seq));
  }
  std::string key;
  in >> key;
  if (key == "markov") {
    MarkovInfo m;
    std::size_t v = 0;
    in >> m.sharpness >> v;
    m.successor.assign(v + 1, 0);
    for (std::size_t i = 1; i <= v; ++i) in >> m.successor[i];
    if (!in) throw FormatError("dataset cache: truncated transition map");
    ds.markov = std::move(m);
    in >> key;
  }
  if (key != "end") throw FormatError("dataset cache: missing end marker");
  return ds;
}

void save_dataset(const InteractionDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset cache '" + path + "'");
  save_dataset(ds, out);
}

InteractionDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("dataset-not-found", "no dataset cache at '" + path + "'");
  return load_dataset(in);
}

}  // namespace grela::data
