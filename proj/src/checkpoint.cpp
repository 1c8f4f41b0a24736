#include "grela/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "grela/error.hpp"

namespace grela {

namespace {

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

std::string shape_token(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out.empty() ? "scalar" : out;
}

Shape parse_shape_token(const std::string& tok) {
  Shape s;
  if (tok == "scalar") return s;
  std::istringstream in(tok);
  std::string part;
  while (std::getline(in, part, 'x')) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos)
      throw FormatError("checkpoint: bad shape '" + tok + "'");
    s.push_back(std::stoull(part));
  }
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const GrelaModel& model, const RunConfig& config, std::uint64_t seed,
                     const std::map<std::string, std::string>& meta) {
  const auto params = model.named_parameters();
  std::ostringstream man;
  man << "format_version = " << kCheckpointVersion << "\n";
  man << "seed = " << seed << "\n";
  for (const auto& [k, v] : meta) man << k << " = " << v << "\n";
  RunConfig stored = config;
  stored.model = model.config();
  stored.train.seed = seed;
  man << "[config]\n" << config_to_text(stored);
  man << "[parameters]\n";
  std::size_t offset = 0;
  for (const auto& [name, t] : params) {
    man << name << ' ' << shape_token(t.shape()) << ' ' << offset << ' ' << t.size() << "\n";
    offset += t.size();
  }
  const std::string manifest = man.str();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + path + "'");
    out << "GRELA-CKPT " << kCheckpointVersion << "\n" << "manifest_bytes " << manifest.size() << "\n" << manifest;
    std::vector<std::uint64_t> words;
    for (const auto& [name, t] : params) {
      words.resize(t.size());
      for (std::size_t i = 0; i < t.size(); ++i) words[i] = to_little(std::bit_cast<std::uint64_t>(t[i]));
      out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 8));
    }
    if (!out) throw IoError("short write to checkpoint '" + path + "'");
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData read_checkpoint(const std::string& path) {
  if (!std::filesystem::exists(path)) throw DataError("checkpoint-not-found", "no checkpoint at '" + path + "'");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint '" + path + "'");
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "GRELA-CKPT") throw FormatError("checkpoint: '" + path + "' is not a checkpoint");
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  std::string key;
  std::size_t manifest_bytes = 0;
  in >> key >> manifest_bytes;
  if (key != "manifest_bytes" || !in) throw FormatError("checkpoint: missing manifest size");
  in.get();  // newline
  std::string manifest(manifest_bytes, '\0');
  in.read(manifest.data(), static_cast<std::streamsize>(manifest_bytes));
  if (!in) throw FormatError("checkpoint: truncated manifest");

  CheckpointData data;
  std::istringstream man(manifest);
  std::string line, config_text;
  enum { Meta, Config, Params } section = Meta;
  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset, count;
  };
  std::vector<Entry> entries;
  while (std::getline(man, line)) {
    if (line == "[config]") {
      section = Config;
      continue;
    }
    if (line == "[parameters]") {
      section = Params;
      continue;
    }
    if (section == Config) {
      config_text += line + "\n";
    } else if (section == Params) {
      std::istringstream ls(line);
      Entry e;
      std::string shape;
      if (!(ls >> e.name >> shape >> e.offset >> e.count)) throw FormatError("checkpoint: bad parameter line '" + line + "'");
      e.shape = parse_shape_token(shape);
      if (shape_size(e.shape) != e.count) throw FormatError("checkpoint: count mismatch for " + e.name);
      entries.push_back(std::move(e));
    } else {
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) continue;
      data.meta[line.substr(0, eq)] = line.substr(eq + 3);
    }
  }
  try {
    data.config = parse_config(config_text);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: stored config invalid: ") + e.what());
  }
  data.seed = data.config.train.seed.value_or(0);

  std::size_t expected = 0;
  for (const auto& e : entries) {
    if (e.offset != expected) throw FormatError("checkpoint: non-contiguous payload at " + e.name);
    expected += e.count;
  }
  std::vector<std::uint64_t> words(expected);
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(expected * 8));
  if (static_cast<std::size_t>(in.gcount()) != expected * 8) throw FormatError("checkpoint: truncated payload");
  in.peek();
  if (!in.eof()) throw FormatError("checkpoint: trailing bytes after payload");
  for (const auto& e : entries) {
    Tensor t(e.shape);
    for (std::size_t i = 0; i < e.count; ++i) t[i] = std::bit_cast<double>(to_little(words[e.offset + i]));
    data.params.emplace_back(e.name, std::move(t));
  }
  return data;
}

void load_parameters(GrelaModel& model, const CheckpointData& data) {
  auto params = model.named_parameters();
  if (params.size() != data.params.size())
    throw FormatError("checkpoint: holds " + std::to_string(data.params.size()) + " tensors, model has " +
                      std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, dst] = params[i];
    const auto& [sname, src] = data.params[i];
    if (name != sname || dst.shape() != src.shape())
      throw FormatError("checkpoint: parameter " + sname + " " + shape_string(src.shape()) + " does not match " +
                        name + " " + shape_string(dst.shape()));
    std::copy(src.data().begin(), src.data().end(), dst.data().begin());
  }
}

GrelaModel restore_model(const CheckpointData& data) {
  Rng rng(data.seed);
  GrelaModel model(data.config.model, rng);
  load_parameters(model, data);
  return model;
}

}  // namespace grela
