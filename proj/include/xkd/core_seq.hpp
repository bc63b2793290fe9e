#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace xkd {

using TokenId = int;

/// Token inventory. BOS and EOS are ordinary members of the action space.
struct Vocab {
  int size = 8;
  TokenId bos_id = 0;
  TokenId eos_id = 1;

  void validate() const;
  bool contains(TokenId t) const { return t >= 0 && t < size; }
  bool operator==(const Vocab&) const = default;
};

/// A generated sequence. tokens[0] is always BOS; EOS may only close it.
struct Sequence {
  std::vector<TokenId> tokens;

  /// Number of generated (non-BOS) tokens.
  std::size_t steps() const { return tokens.empty() ? 0 : tokens.size() - 1; }
  bool terminated(const Vocab& v) const { return tokens.size() > 1 && tokens.back() == v.eos_id; }
  void validate(const Vocab& v, std::optional<int> max_steps = std::nullopt) const;
  bool operator==(const Sequence&) const = default;
};

struct Prompt {
  std::vector<TokenId> tokens;

  void validate(const Vocab& v) const;
  bool operator==(const Prompt&) const = default;
};

/// (s, a, s', a') for one generated token. a_next is empty on the final step.
struct StepQuadruple {
  std::size_t t = 0;                 // position of the prefix's last token
  std::vector<TokenId> prefix;       // starts with BOS
  TokenId action = 0;
  std::vector<TokenId> next_prefix;  // prefix + action
  std::optional<TokenId> next_action;

  bool terminal() const { return !next_action.has_value(); }
};

std::vector<StepQuadruple> expand_quadruples(const Prompt& x, const Sequence& y, const Vocab& v);

/// Last k tokens of prompt ++ prefix, oldest first. Shorter than k only when
/// fewer tokens exist.
std::vector<TokenId> context_tokens(std::span<const TokenId> prompt, std::span<const TokenId> prefix,
                                    int k);

enum class DatasetKind { prompt_only, prompt_response, teacher_behavior };

struct Record {
  Prompt prompt;
  std::vector<Sequence> responses;  // empty / one / many by kind
};

struct Dataset {
  DatasetKind kind = DatasetKind::prompt_response;
  std::vector<Record> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  void validate(const Vocab& v) const;
};

class DatasetParseError : public std::runtime_error {
 public:
  DatasetParseError(const std::string& path, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Line format: prompt ids, then "|" and the response's generated tokens
/// (BOS is implicit and is prepended on load). Teacher-behavior lines separate
/// responses with ";". Lines starting with "#" are comments.
Dataset load_dataset(const std::filesystem::path& path, DatasetKind kind, const Vocab& v);
Dataset parse_dataset(const std::string& text, DatasetKind kind, const Vocab& v,
                      const std::string& origin = "<memory>");
void write_dataset(const std::filesystem::path& path, const Dataset& d);
std::string format_dataset(const Dataset& d);

const char* to_string(DatasetKind k);
DatasetKind dataset_kind_from_string(const std::string& s);

}  // namespace xkd
