#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include "grela/data.hpp"
#include "grela/error.hpp"

using namespace grela;
using namespace grela::data;

namespace {

std::vector<InteractionRecord> parse(const std::string& text, const LoadOptions& opt = {}, LoadReport* rep = nullptr) {
  std::istringstream in(text);
  return parse_interactions(in, opt, rep, "test.tsv");
}

std::vector<InteractionRecord> records(const std::map<std::string, std::vector<std::string>>& seqs) {
  std::vector<InteractionRecord> r;
  std::int64_t ts = 0;
  for (const auto& [u, items] : seqs)
    for (const auto& i : items) r.push_back({u, i, ts++});
  return r;
}

}  // namespace

TEST_CASE("parsing interaction files") {
  const auto r = parse("user_id:token\titem_id:token\trating:float\ttimestamp:float\n1\t10\t5\t100\n1\t11\t3\t90\n2\t10\t4\t95\n");
  REQUIRE(r.size() == 3);
  CHECK(r[1].user == "1");
  CHECK(r[1].item == "11");
  CHECK(r[1].timestamp == 90);
  CHECK(parse("user_id\titem_id\ttimestamp\n").empty());

  LoadOptions csv;
  csv.format = "csv";
  const auto c = parse("timestamp,item_id,user_id\n5,\"a,b\",u1\n", csv);
  REQUIRE(c.size() == 1);
  CHECK(c[0].item == "a,b");

  std::string text = "user_id\titem_id\ttimestamp\n";
  for (int i = 0; i < 98; ++i) text += "u\ti\t" + std::to_string(i) + "\n";
  text += "u\ti\tnot-a-time\nbroken line\n";
  try {
    (void)parse(text);
    FAIL("expected malformed-input");
  } catch (const DataError& e) {
    CHECK(e.error_class() == "malformed-input");
    CHECK(std::string(e.what()).find("2 of 100") != std::string::npos);
  }
  LoadReport rep;
  LoadOptions lax;
  lax.max_malformed_fraction = 0.05;
  CHECK(parse(text, lax, &rep).size() == 98);
  CHECK(rep.malformed == 2);
  CHECK(rep.malformed_lines.front() == 100);

  LoadOptions bad;
  bad.item_column = "movie";
  try {
    (void)parse("user_id\titem_id\ttimestamp\n", bad);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("movie") != std::string::npos);
    CHECK(msg.find("user_id") != std::string::npos);
    CHECK(msg.find("timestamp") != std::string::npos);
  }
  CHECK_THROWS_AS(load_interactions("/nonexistent/file.tsv", {}), IoError);
}

TEST_CASE("k-core filtering") {
  BuildOptions opt;
  opt.min_user = 2;
  opt.min_item = 1;
  const auto ds = build_dataset(records({{"A", {"1", "2", "3"}}, {"B", {"1"}}}), opt);
  CHECK(ds.user_tokens == std::vector<std::string>{"A"});
  CHECK(ds.num_items() == 3);

  // dropping a user can push an item under its minimum; iterate to a fixed point
  opt.min_item = 2;
  const auto rec = records({{"A", {"x", "y", "z"}}, {"B", {"x", "y"}}, {"C", {"z"}}});
  const auto fixed = build_dataset(rec, opt);
  CHECK(fixed.num_users() == 2);
  CHECK(fixed.num_items() == 2);
  for (const auto& s : fixed.sequences) CHECK(s.size() >= 2);
  opt.iterate_filter = false;
  const auto once = build_dataset(rec, opt);
  CHECK(once.sequences[0].size() == 3);  // z still counted twice during the single pass
  CHECK_THROWS_AS(build_dataset(records({{"A", {"1"}}}), BuildOptions{}), DataError);
}

TEST_CASE("dense ids, chronology and truncation") {
  std::vector<InteractionRecord> r;
  for (int t = 299; t >= 0; --t) r.push_back({"u", "i" + std::to_string(t), t});
  BuildOptions opt;
  opt.min_user = 1;
  opt.min_item = 1;
  const auto ds = build_dataset(r, opt);
  REQUIRE(ds.sequences[0].size() == 200);
  CHECK(ds.interactions == 300);
  CHECK(ds.item_tokens[static_cast<std::size_t>(ds.sequences[0].back())] == "i299");
  CHECK(ds.item_tokens[static_cast<std::size_t>(ds.sequences[0].front())] == "i100");
  std::set<std::int32_t> ids(ds.sequences[0].begin(), ds.sequences[0].end());
  CHECK(*ids.begin() >= 1);
  CHECK(static_cast<std::size_t>(*ids.rbegin()) <= ds.num_items());
  const auto test = examples(ds, Split::Test);
  REQUIRE(test.size() == 1);
  CHECK(test[0].target == ds.sequences[0].back());
}

TEST_CASE("leave-one-out splits") {
  InteractionDataset ds;
  ds.item_tokens = {"[PAD]", "a", "b", "c", "d", "e"};
  ds.user_tokens = {"u"};
  ds.sequences = {{1, 2, 3, 4, 5}};
  ds.max_len = 8;
  const auto test = examples(ds, Split::Test), valid = examples(ds, Split::Valid), train = examples(ds, Split::Train);
  REQUIRE(test.size() == 1);
  CHECK(test[0].length == 4);
  CHECK(test[0].target == 5);
  REQUIRE(valid.size() == 1);
  CHECK(valid[0].length == 3);
  CHECK(valid[0].target == 4);
  REQUIRE(train.size() == 2);
  CHECK(train[0].target == 2);
  CHECK(train[1].target == 3);
  // nothing from the validation or test positions leaks into training
  for (const auto& e : train) CHECK(e.length + 1 < valid[0].length + 1);
}

TEST_CASE("batching") {
  InteractionDataset ds;
  ds.item_tokens = {"[PAD]", "a", "b", "c"};
  ds.max_len = 6;
  for (int u = 0; u < 5; ++u) {
    ds.user_tokens.push_back("u" + std::to_string(u));
    ds.sequences.push_back(std::vector<std::int32_t>(static_cast<std::size_t>(2 + u), 1 + u % 3));
  }
  const auto b = make_batches(ds, Split::Test, 2);
  REQUIRE(b.size() == 3);
  CHECK(b[0].size == 2);
  CHECK(b[1].size == 2);
  CHECK(b[2].size == 1);
  for (const auto& batch : b)
    for (std::size_t r = 0; r < batch.size; ++r) {
      const auto& seq = ds.sequences[batch.users[r]];
      std::size_t pads = 0;
      for (std::size_t c = 0; c < batch.width; ++c) pads += batch.ids[r * batch.width + c] == 0;
      CHECK(pads == batch.width - (seq.size() - 1));
      CHECK(batch.ids[(r + 1) * batch.width - 1] == seq[seq.size() - 2]);
    }
  const auto s1 = make_batches(ds, Split::Test, 2, 99), s2 = make_batches(ds, Split::Test, 2, 99);
  for (std::size_t i = 0; i < s1.size(); ++i) CHECK(s1[i].users == s2[i].users);
  CHECK_THROWS_AS(make_batches(ds, Split::Test, 0), ContractError);
}

TEST_CASE("synthetic Markov corpus") {
  SynthOptions o;
  o.seed = 5;
  const auto cyc = synth_markov(o);
  REQUIRE(cyc.markov);
  // one cycle through every item
  std::set<std::int32_t> seen;
  std::int32_t cur = 1;
  for (std::size_t i = 0; i < 10; ++i) seen.insert(cur = cyc.markov->successor[static_cast<std::size_t>(cur)]);
  CHECK(seen.size() == 10);
  CHECK(cur == 1);
  for (const auto& s : cyc.sequences)
    for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[i] == cyc.markov->successor[static_cast<std::size_t>(s[i - 1])]);
  CHECK(cyc.markov->bayes_hit_rate(1) == 1.0);

  o.sharpness = 0.0;
  CHECK(synth_markov(o).markov->bayes_hit_rate(1) == doctest::Approx(0.1));

  o.sharpness = 0.8;
  o.vocab = 100;
  const auto m = synth_markov(o);
  CHECK(m.markov->bayes_hit_rate(10) == doctest::Approx(0.82));
  Rng rng(1);
  std::size_t hits = 0;
  const std::size_t draws = 100000;
  std::int32_t c = 1;
  for (std::size_t i = 0; i < draws; ++i) {
    const std::int32_t next = m.markov->next(c, rng);
    hits += next == m.markov->successor[static_cast<std::size_t>(c)];
    c = next;
  }
  // the successor also wins (1 - s) / V of the uniform draws
  CHECK(std::abs(static_cast<double>(hits) / draws - (0.8 + 0.2 / 100)) < 0.02);
}

TEST_CASE("dataset statistics") {
  SynthOptions o;
  o.num_users = 1000;
  o.vocab = 50;
  o.sharpness = 0.5;
  o.seed = 8;
  const auto ds = synth_markov(o);
  const auto st = compute_stats(ds);
  std::size_t total = 0;
  std::set<std::int32_t> items;
  for (const auto& s : ds.sequences) {
    total += s.size();
    items.insert(s.begin(), s.end());
  }
  CHECK(st.users == 1000);
  CHECK(st.interactions == total);
  CHECK(st.avg_user_actions == doctest::Approx(static_cast<double>(total) / 1000));
  CHECK(st.items == 50);
  CHECK(items.size() == 50);
  const std::string t = format_stats_table(st, "synth");
  CHECK(t.rfind("Dataset\t#Users\t#Items\t#Interactions\tAvg. UA\tAvg. IA\tSparsity\n", 0) == 0);
  CHECK(t.find("synth\t1,001\t51\t") != std::string::npos);

  // ML-1M reference counts reproduce the published row
  DatasetStats ml{6040, 3416, 999611, 0, 0, 0};
  ml.avg_user_actions = 999611.0 / 6040;
  ml.avg_item_actions = 999611.0 / 3416;
  ml.sparsity = 1.0 - 999611.0 / (6040.0 * 3416.0);
  CHECK(format_stats_table(ml, "ml-1m") == "Dataset\t#Users\t#Items\t#Interactions\tAvg. UA\tAvg. IA\tSparsity\n"
                                          "ml-1m\t6,041\t3,417\t999,611\t165.5\t292.6\t95.15%\n");
}

TEST_CASE("dataset cache round trip") {
  SynthOptions o;
  o.sharpness = 0.7;
  o.seed = 3;
  auto ds = synth_markov(o);
  ds.item_tokens[3] = "odd token\twith%tab";
  std::stringstream buf;
  save_dataset(ds, buf);
  const auto back = load_dataset(buf);
  CHECK(back == ds);
  const auto path = (std::filesystem::temp_directory_path() / "grela_cache_test.cache").string();
  save_dataset(ds, path);
  CHECK(load_dataset(path) == ds);
  std::filesystem::remove(path);
  try {
    (void)load_dataset("/nonexistent/ds.cache");
    FAIL("expected dataset-not-found");
  } catch (const DataError& e) {
    CHECK(e.error_class() == "dataset-not-found");
  }
  std::stringstream junk("GRELA-DATASET 9\n");
  CHECK_THROWS_AS(load_dataset(junk), FormatError);
}
