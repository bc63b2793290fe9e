#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "helpers.hpp"
#include "xkd/checkpoint.hpp"
#include "xkd/config.hpp"

using namespace xkd;

namespace {
std::string error_of(const std::string& text, const std::vector<std::string>& overrides = {}) {
  try {
    parse_config(text, overrides);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}
}  // namespace

TEST_CASE("empty config gives defaults") {
  Settings s = parse_config("");
  Settings d;
  CHECK(s == d);
  CHECK(s.exp.train.xkd.lambda == 0.001);
  CHECK(s.exp.train.xkd.alpha == 0.5);
  CHECK(s.exp.train.xkd.beta == 0.5);
  CHECK(s.exp.train.gen.max_len == s.exp.task.max_len());
}

TEST_CASE("overrides apply after the file") {
  Settings s = parse_config("xkd.lambda = 0.5\n# note\ntrain.steps = 10\n", {"xkd.lambda=0"});
  CHECK(s.exp.train.xkd.lambda == 0.0);
  CHECK(s.exp.train.steps == 10);
  Settings m = parse_config("task.kind = modsum\n");
  CHECK(m.exp.train.gen.max_len == 2);
  Settings seeded = parse_config("seed = 9\n");
  CHECK(seeded.exp.train.seed == 9);
  CHECK(seeded.exp.train.gen.seed == 9);
}

TEST_CASE("config errors name the key") {
  CHECK(error_of("xkd.alpha = 1.5\n").find("xkd.alpha") != std::string::npos);
  CHECK(error_of("", {"xkd.alpha=1.5"}).find("xkd.alpha") != std::string::npos);
  CHECK(error_of("xkd.alhpa = 0.5\n").find("xkd.alhpa") != std::string::npos);
  CHECK(error_of("train.steps = many\n").find("train.steps") != std::string::npos);
  CHECK(error_of("train.steps = 1\ntrain.steps = 2\n").find("line 2") != std::string::npos);
  CHECK(error_of("xkd.beta\n") != "");
  CHECK(error_of("gen.max_len = 1\n").find("gen.max_len") != std::string::npos);
}

TEST_CASE("config round-trips through its formatted form") {
  Settings s = parse_config(
      "task.kind = reverse\nxkd.lambda = 0.015\ntrain.method = blackbox\nsweep.values = 0.1, 0.7\n"
      "eval.temperatures = 0.2, 0.9\nxkd.student_view = boltzmann\n");
  CHECK(parse_config(format_config(s)) == s);
  for (const auto& k : config_keys()) CHECK(format_config(s).find(k + " =") != std::string::npos);
}

TEST_CASE("required keys") {
  Settings s;
  CHECK_THROWS_AS(require_keys(s, "eval"), ConfigError);
  s.student_checkpoint = "x.ckpt";
  CHECK_NOTHROW(require_keys(s, "eval"));
  CHECK_NOTHROW(require_keys(Settings{}, "distill"));
  CHECK(method_variant_from_string("GXKD") == MethodVariant{Method::generalized, true});
  CHECK(method_variant_from_string("BBSeqKD") == MethodVariant{Method::blackbox, false});
  CHECK_THROWS(method_variant_from_string("XYZ"));
}

TEST_CASE("neural checkpoint round-trip with head") {
  const Vocab v{7, 0, 1};
  Rng rng(1);
  auto p = NeuralPolicy::random(v, 2, 5, 0.7, rng);
  auto h = RewardPosterior::random(v, 2, 0.4, rng);
  auto path = std::filesystem::temp_directory_path() / "xkd_ckpt_test.ckpt";
  save_checkpoint(path, p, &h);
  auto c = load_checkpoint(path, v);
  std::filesystem::remove(path);
  const auto& q = std::get<NeuralPolicy>(c.policy);
  CHECK(q.context_window() == 2);
  CHECK(q.hidden_size() == 5);
  CHECK(testing::max_abs_diff(p.params(), q.params()) == 0.0);
  REQUIRE(c.head.has_value());
  CHECK(c.head->context_window() == 2);
  CHECK(testing::max_abs_diff(h.params(), c.head->params()) == 0.0);
}

TEST_CASE("tabular checkpoint round-trip") {
  const Vocab v{6, 0, 1};
  Rng rng(2);
  auto t = TabularPolicy::random(v, 2, rng);
  auto c = parse_checkpoint(format_checkpoint(t), v);
  CHECK_FALSE(c.head.has_value());
  const auto& u = std::get<TabularPolicy>(c.policy);
  CHECK(u.table() == t.table());
}

TEST_CASE("malformed checkpoints") {
  const Vocab v{6, 0, 1};
  NeuralPolicy p(v, 1, 2);
  CHECK_THROWS_AS(parse_checkpoint(format_checkpoint(p), Vocab{7, 0, 1}), CheckpointError);
  CHECK_THROWS_AS(parse_checkpoint("neural k=1 hidden=2 vocab=6\n0.5\n", v), CheckpointError);
  CHECK_THROWS_AS(parse_checkpoint("garbage\n", v), CheckpointError);
  CHECK_THROWS(load_checkpoint("/nonexistent/x.ckpt", v));
}
