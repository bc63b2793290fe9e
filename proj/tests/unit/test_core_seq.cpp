#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "xkd/core_seq.hpp"

using namespace xkd;

namespace {
const Vocab kV{8, 0, 1};
const Prompt kX{{5}};
}  // namespace

TEST_CASE("quadruples of a bare BOS sequence are empty") {
  CHECK(expand_quadruples(kX, Sequence{{0}}, kV).empty());
}

TEST_CASE("single generated token gives one terminal quadruple") {
  auto q = expand_quadruples(kX, Sequence{{0, 3}}, kV);
  REQUIRE(q.size() == 1);
  CHECK(q[0].action == 3);
  CHECK(q[0].terminal());
  CHECK(q[0].prefix == std::vector<TokenId>{0});
  CHECK(q[0].next_prefix == std::vector<TokenId>{0, 3});
}

TEST_CASE("three-step expansion") {
  auto q = expand_quadruples(kX, Sequence{{0, 3, 4, 1}}, kV);
  REQUIRE(q.size() == 3);
  CHECK(q[1].prefix == std::vector<TokenId>{0, 3});
  CHECK(q[1].action == 4);
  CHECK(q[1].next_action == std::optional<TokenId>{1});
  CHECK(q[1].next_prefix == std::vector<TokenId>{0, 3, 4});
  CHECK(q[2].terminal());
  for (std::size_t i = 0; i < q.size(); ++i) CHECK(q[i].t == i);
}

TEST_CASE("quadruples are lossless and match an indexed loop") {
  Rng rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    Prompt x = testing::random_prompt(kV, 2, rng);
    Sequence y = testing::random_sequence(kV, 5, rng);
    auto q = expand_quadruples(x, y, kV);
    REQUIRE(q.size() == y.steps());
    Sequence rebuilt{{kV.bos_id}};
    for (const auto& s : q) rebuilt.tokens.push_back(s.action);
    CHECK(rebuilt == y);

    // f(t, prefix_len, action, next) summed both ways
    auto f = [](std::size_t t, std::size_t len, TokenId a, int next) {
      return 1.7 * static_cast<double>(t) + 0.3 * static_cast<double>(len) + a * a - 0.5 * next;
    };
    double via_quads = 0.0;
    for (const auto& s : q) via_quads += f(s.t, s.prefix.size(), s.action, s.next_action.value_or(-1));
    double direct = 0.0;
    for (std::size_t t = 0; t + 1 < y.tokens.size(); ++t) {
      const int next = t + 2 < y.tokens.size() ? y.tokens[t + 2] : -1;
      direct += f(t, t + 1, y.tokens[t + 1], next);
    }
    CHECK(via_quads == direct);
  }
}

TEST_CASE("context tokens") {
  std::vector<TokenId> p{5, 6}, pre{0, 3};
  CHECK(context_tokens(p, pre, 3) == std::vector<TokenId>{6, 0, 3});
  CHECK(context_tokens(p, pre, 10) == std::vector<TokenId>{5, 6, 0, 3});
  CHECK(context_tokens(p, pre, 1) == std::vector<TokenId>{3});
}

TEST_CASE("vocab and sequence validation") {
  CHECK_NOTHROW(kV.validate());
  CHECK_THROWS(Vocab{2, 0, 1}.validate());
  CHECK_THROWS(Vocab{5, 1, 1}.validate());
  CHECK_NOTHROW(Sequence{{0, 2, 1}}.validate(kV));
  CHECK_THROWS(Sequence{{2, 1}}.validate(kV));
  CHECK_THROWS(Sequence{{0, 1, 2}}.validate(kV));
  CHECK_THROWS(Sequence{{0, 9}}.validate(kV));
  CHECK_THROWS(Sequence{{0, 2, 3, 4}}.validate(kV, 2));
  CHECK_THROWS(Prompt{}.validate(kV));
  CHECK_THROWS(Prompt{{2, 1}}.validate(kV));
}

TEST_CASE("empty dataset text") {
  auto d = parse_dataset("", DatasetKind::prompt_response, kV);
  CHECK(d.empty());
}

TEST_CASE("one prompt-response line") {
  auto d = parse_dataset("2 3 | 4 5\n", DatasetKind::prompt_response, kV);
  REQUIRE(d.size() == 1);
  CHECK(d.records[0].prompt == Prompt{{2, 3}});
  REQUIRE(d.records[0].responses.size() == 1);
  CHECK(d.records[0].responses[0] == Sequence{{0, 4, 5}});
}

TEST_CASE("teacher-behavior line with two responses, comments skipped") {
  auto d = parse_dataset("# header\n2 3 | 4 1 ; 5 6 1\n\n", DatasetKind::teacher_behavior, kV);
  REQUIRE(d.size() == 1);
  REQUIRE(d.records[0].responses.size() == 2);
  CHECK(d.records[0].responses[1] == Sequence{{0, 5, 6, 1}});
}

TEST_CASE("parse errors carry the line number") {
  try {
    parse_dataset("2 | 3\n2 | 9\n", DatasetKind::prompt_response, kV, "data.txt");
    FAIL("expected a parse error");
  } catch (const DatasetParseError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("data.txt") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_dataset("2 3\n", DatasetKind::prompt_response, kV), DatasetParseError);
  CHECK_THROWS_AS(parse_dataset("2 x | 3\n", DatasetKind::prompt_response, kV), DatasetParseError);
  CHECK_THROWS_AS(parse_dataset("2 | 3 1 4\n", DatasetKind::prompt_response, kV), DatasetParseError);
  CHECK_THROWS_AS(parse_dataset("2 | 3\n", DatasetKind::prompt_only, kV), DatasetParseError);
}

TEST_CASE("dataset file round-trip") {
  const std::string text = "2 3 | 4 1 ; 5 6 1\n7 | 1\n";
  auto d = parse_dataset(text, DatasetKind::teacher_behavior, kV);
  auto path = std::filesystem::temp_directory_path() / "xkd_test_roundtrip.txt";
  write_dataset(path, d);
  auto back = load_dataset(path, DatasetKind::teacher_behavior, kV);
  std::filesystem::remove(path);
  REQUIRE(back.size() == d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(back.records[i].prompt == d.records[i].prompt);
    CHECK(back.records[i].responses == d.records[i].responses);
  }
  CHECK(format_dataset(back) == format_dataset(d));
}

TEST_CASE("missing dataset file names the path") {
  try {
    load_dataset("/nonexistent/xkd.txt", DatasetKind::prompt_only, kV);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("/nonexistent/xkd.txt") != std::string::npos);
  }
}
