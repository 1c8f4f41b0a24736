#include <doctest.h>

#include <map>
#include <string>

#include "grela/config.hpp"
#include "grela/error.hpp"

using namespace grela;

TEST_CASE("defaults") {
  const RunConfig c;
  CHECK(c.model.dim == 64);
  CHECK(c.model.heads == 4);
  CHECK(c.model.max_len == 200);
  CHECK(c.model.conv_kernel == 4);
  CHECK(c.model.long_term());
  CHECK(c.train.learning_rate == 1e-3);
  CHECK(c.train.eval_metric == "ndcg@10");
  CHECK(c.problems().empty());
  ModelConfig shortseq;
  shortseq.max_len = 96;
  CHECK_FALSE(shortseq.long_term());
  shortseq.max_len = 97;
  CHECK(shortseq.long_term());
}

TEST_CASE("parse and round trip") {
  const RunConfig c = parse_config(R"(
# small model
dim = 32
heads = 2   # two heads
attention = linear
position = lpe
topk = 1, 5, 20
eval_metric = hr@20
gate = false
seed = 42
)");
  CHECK(c.model.dim == 32);
  CHECK(c.model.heads == 2);
  CHECK(c.model.attention == attention::Variant::Linear);
  CHECK(c.model.position == PositionEncoding::Lpe);
  CHECK(c.train.topk == std::vector<std::size_t>{1, 5, 20});
  CHECK_FALSE(c.model.gate);
  CHECK(c.train.seed == 42u);
  const RunConfig again = parse_config(config_to_text(c));
  CHECK(config_to_text(again) == config_to_text(c));
}

TEST_CASE("every problem is reported at once") {
  try {
    (void)parse_config("dim = 30\nheads = 4\nbogus_key = 1\nlr = fast\nno equals sign\n");
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(e.error_class() == "config");
    CHECK(msg.rfind("4 problem(s)", 0) == 0);
    CHECK(msg.find("line 3") != std::string::npos);
    CHECK(msg.find("bogus_key") != std::string::npos);
    CHECK(msg.find("line 4") != std::string::npos);
    CHECK(msg.find("line 5") != std::string::npos);
    CHECK(msg.find("divisible") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("eval_metric = ndcg@7\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("dropout = 1.0\n"), ConfigError);
}

TEST_CASE("environment overrides") {
  CHECK(env_name("max_len") == "GRELA_MAX_LEN");
  std::map<std::string, std::string> env{{"GRELA_DIM", "16"}, {"GRELA_ATTENTION", "dot"}, {"HOME", "/x"}};
  auto get = [&](const char* k) -> const char* {
    const auto it = env.find(k);
    return it == env.end() ? nullptr : it->second.c_str();
  };
  RunConfig c;
  apply_env_overrides(c, get);
  CHECK(c.model.dim == 16);
  CHECK(c.model.attention == attention::Variant::DotProduct);
  env["GRELA_HEADS"] = "many";
  CHECK_THROWS_AS(apply_env_overrides(c, get), ConfigError);
  const auto keys = config_keys();
  CHECK(keys.size() >= 40);
  for (const auto& k : keys) CHECK(env_name(k).rfind("GRELA_", 0) == 0);
}

TEST_CASE("frozen learning rate is a valid setting") {
  TrainConfig t;
  t.learning_rate = 0.0;
  CHECK(t.problems().empty());
  t.learning_rate = -1.0;
  CHECK_FALSE(t.problems().empty());
}
