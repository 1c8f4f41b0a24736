#pragma once

// Interaction logs -> per-user chronological id sequences -> leave-one-out
// examples -> left-padded batches. Dense item ids start at 1; id 0 is padding.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "grela/rng.hpp"

namespace grela::data {

struct InteractionRecord {
  std::string user;
  std::string item;
  std::int64_t timestamp = 0;
};

struct LoadOptions {
  std::string format = "tsv";  // tsv or csv
  std::string user_column = "user_id";
  std::string item_column = "item_id";
  std::string time_column = "timestamp";
  double max_malformed_fraction = 0.01;
};

struct LoadReport {
  std::size_t rows = 0;
  std::size_t malformed = 0;
  std::vector<std::size_t> malformed_lines;  // 1-based file lines, first few only
};

// Header columns may carry a ":type" suffix (user_id:token); only the part
// before ':' is matched. Missing columns: FormatError naming the available
// ones. More than max_malformed_fraction bad rows: DataError
// "malformed-input" with the count. `source` names the input in messages.
std::vector<InteractionRecord> parse_interactions(std::istream& in, const LoadOptions& opt,
                                                  LoadReport* report = nullptr, const std::string& source = "input");
std::vector<InteractionRecord> load_interactions(const std::string& path, const LoadOptions& opt,
                                                 LoadReport* report = nullptr);

// Transition structure of a synthetic corpus: next = successor[cur] with
// probability sharpness, otherwise uniform over all items.
struct MarkovInfo {
  double sharpness = 1.0;
  std::vector<std::int32_t> successor;  // index by item id, [0] unused

  std::size_t vocab() const noexcept { return successor.empty() ? 0 : successor.size() - 1; }
  std::int32_t next(std::int32_t current, Rng& rng) const;
  // HR@K of the Bayes-optimal ranking (successor first): s + (1 - s) K / V.
  double bayes_hit_rate(std::size_t k) const;

  bool operator==(const MarkovInfo&) const = default;
};

struct InteractionDataset {
  std::vector<std::string> item_tokens;  // [0] is the padding token
  std::vector<std::string> user_tokens;
  std::vector<std::vector<std::int32_t>> sequences;  // chronological, at most max_len items
  std::size_t max_len = 0;
  std::size_t interactions = 0;  // retained after filtering, before truncation
  std::optional<MarkovInfo> markov;

  std::size_t num_users() const noexcept { return user_tokens.size(); }
  std::size_t num_items() const noexcept { return item_tokens.empty() ? 0 : item_tokens.size() - 1; }
  std::size_t vocab_size() const noexcept { return item_tokens.size(); }

  bool operator==(const InteractionDataset&) const = default;
};

struct BuildOptions {
  std::size_t min_user = 5;
  std::size_t min_item = 5;
  std::size_t max_len = 200;
  bool iterate_filter = true;  // alternate until no user or item violates its minimum
};

InteractionDataset build_dataset(const std::vector<InteractionRecord>& records, const BuildOptions& opt);

struct DatasetStats {
  std::size_t users = 0, items = 0, interactions = 0;
  double avg_user_actions = 0.0, avg_item_actions = 0.0, sparsity = 0.0;
};
DatasetStats compute_stats(const InteractionDataset& ds);
// Columns: Dataset, #Users, #Items, #Interactions, Avg. UA, Avg. IA, Sparsity.
// User and item counts include the padding slot, as recommendation toolkits
// report them; averages and sparsity use the real counts. Sparsity is
// truncated, not rounded, to two decimals.
std::string format_stats_table(const DatasetStats& s, const std::string& name);

enum class Split { Train, Valid, Test };
Split parse_split(std::string_view name);
std::string_view split_name(Split s) noexcept;

// One prediction: the first `length` items of user's sequence predict
// `target`. Train holds every prefix ending before the validation item.
struct Example {
  std::uint32_t user;
  std::uint32_t length;
  std::int32_t target;
};
std::vector<Example> examples(const InteractionDataset& ds, Split split);

struct Batch {
  std::size_t size = 0, width = 0;
  std::vector<std::int32_t> ids;  // size x width, left-padded
  std::vector<std::int32_t> targets;
  std::vector<std::uint32_t> users;
};

// Fixed-width (ds.max_len) batches in a deterministic order; shuffled when a
// seed is given. The last batch may be partial.
class BatchSampler {
 public:
  BatchSampler(const InteractionDataset& ds, Split split, std::size_t batch_size,
               std::optional<std::uint64_t> shuffle_seed = std::nullopt);
  std::size_t size() const noexcept { return (examples_.size() + batch_size_ - 1) / batch_size_; }
  std::size_t example_count() const noexcept { return examples_.size(); }
  Batch batch(std::size_t index) const;

 private:
  const InteractionDataset* ds_;
  std::vector<Example> examples_;
  std::size_t batch_size_;
};
std::vector<Batch> make_batches(const InteractionDataset& ds, Split split, std::size_t batch_size,
                                std::optional<std::uint64_t> shuffle_seed = std::nullopt);

struct SynthOptions {
  std::size_t num_users = 500;
  std::size_t vocab = 10;
  double sharpness = 1.0;
  std::size_t min_length = 8;
  std::size_t max_length = 20;
  std::size_t max_len = 50;  // model window
  std::uint64_t seed = 0;
};
// Successor map is a single random cycle over all items, so a sharpness of 1
// visits every item deterministically.
InteractionDataset synth_markov(const SynthOptions& opt);

// Versioned text cache: vocabulary table plus delta-encoded sequences.
void save_dataset(const InteractionDataset& ds, std::ostream& out);
InteractionDataset load_dataset(std::istream& in);
void save_dataset(const InteractionDataset& ds, const std::string& path);
InteractionDataset load_dataset(const std::string& path);

}  // namespace grela::data
