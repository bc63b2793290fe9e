#include "xkd/core_seq.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace xkd {

void Vocab::validate() const {
  if (size < 3) throw std::invalid_argument("vocab size must be at least 3");
  if (!contains(bos_id) || !contains(eos_id)) throw std::invalid_argument("bos/eos id outside vocab");
  if (bos_id == eos_id) throw std::invalid_argument("bos and eos ids must differ");
}

void Sequence::validate(const Vocab& v, std::optional<int> max_steps) const {
  if (tokens.empty() || tokens.front() != v.bos_id)
    throw std::invalid_argument("sequence must start with BOS");
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!v.contains(tokens[i]))
      throw std::invalid_argument("token " + std::to_string(tokens[i]) + " outside vocab");
    if (i > 0 && tokens[i] == v.eos_id && i + 1 != tokens.size())
      throw std::invalid_argument("EOS may only appear as the final token");
  }
  if (max_steps && static_cast<int>(steps()) > *max_steps)
    throw std::invalid_argument("sequence longer than max length");
}

void Prompt::validate(const Vocab& v) const {
  if (tokens.empty()) throw std::invalid_argument("prompt must be nonempty");
  for (TokenId t : tokens) {
    if (!v.contains(t)) throw std::invalid_argument("prompt token " + std::to_string(t) + " outside vocab");
    if (t == v.eos_id) throw std::invalid_argument("prompt may not contain EOS");
  }
}

std::vector<StepQuadruple> expand_quadruples(const Prompt& x, const Sequence& y, const Vocab& v) {
  (void)x;
  y.validate(v);
  const auto& tok = y.tokens;
  std::vector<StepQuadruple> out;
  out.reserve(y.steps());
  for (std::size_t t = 0; t + 1 < tok.size(); ++t) {
    StepQuadruple q;
    q.t = t;
    q.prefix.assign(tok.begin(), tok.begin() + static_cast<std::ptrdiff_t>(t + 1));
    q.action = tok[t + 1];
    q.next_prefix.assign(tok.begin(), tok.begin() + static_cast<std::ptrdiff_t>(t + 2));
    if (t + 2 < tok.size()) q.next_action = tok[t + 2];
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<TokenId> context_tokens(std::span<const TokenId> prompt, std::span<const TokenId> prefix,
                                    int k) {
  if (k <= 0) return {};
  const std::size_t want = static_cast<std::size_t>(k);
  std::vector<TokenId> ctx;
  ctx.reserve(want);
  const std::size_t from_prefix = std::min(want, prefix.size());
  const std::size_t from_prompt = std::min(want - from_prefix, prompt.size());
  ctx.insert(ctx.end(), prompt.end() - static_cast<std::ptrdiff_t>(from_prompt), prompt.end());
  ctx.insert(ctx.end(), prefix.end() - static_cast<std::ptrdiff_t>(from_prefix), prefix.end());
  return ctx;
}

void Dataset::validate(const Vocab& v) const {
  for (const auto& r : records) {
    r.prompt.validate(v);
    for (const auto& s : r.responses) s.validate(v);
    switch (kind) {
      case DatasetKind::prompt_only:
        if (!r.responses.empty()) throw std::invalid_argument("prompt-only record carries a response");
        break;
      case DatasetKind::prompt_response:
        if (r.responses.size() != 1) throw std::invalid_argument("prompt-response record needs one response");
        break;
      case DatasetKind::teacher_behavior:
        if (r.responses.empty()) throw std::invalid_argument("teacher-behavior record needs responses");
        break;
    }
  }
}

DatasetParseError::DatasetParseError(const std::string& path, std::size_t line, const std::string& what)
    : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  return parts;
}

std::vector<TokenId> parse_ids(const std::string& field, const Vocab& v, const std::string& origin,
                               std::size_t line) {
  std::vector<TokenId> ids;
  std::istringstream in(field);
  std::string word;
  while (in >> word) {
    TokenId id = 0;
    auto [ptr, ec] = std::from_chars(word.data(), word.data() + word.size(), id);
    if (ec != std::errc() || ptr != word.data() + word.size() || id < 0)
      throw DatasetParseError(origin, line, "expected non-negative integer, got '" + word + "'");
    if (!v.contains(id))
      throw DatasetParseError(origin, line, "token " + word + " out of range for vocab size " +
                                                std::to_string(v.size));
    ids.push_back(id);
  }
  return ids;
}

}  // namespace

Dataset parse_dataset(const std::string& text, DatasetKind kind, const Vocab& v, const std::string& origin) {
  Dataset d;
  d.kind = kind;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;

    const auto bar = line.find('|');
    Record rec;
    try {
      rec.prompt.tokens = parse_ids(line.substr(0, bar), v, origin, lineno);
      if (kind == DatasetKind::prompt_only) {
        if (bar != std::string::npos) throw DatasetParseError(origin, lineno, "prompt-only line contains '|'");
      } else {
        if (bar == std::string::npos) throw DatasetParseError(origin, lineno, "missing '|' separator");
        auto fields = split(line.substr(bar + 1), ';');
        if (kind == DatasetKind::prompt_response && fields.size() != 1)
          throw DatasetParseError(origin, lineno, "prompt-response line has multiple responses");
        for (const auto& f : fields) {
          Sequence s;
          s.tokens.push_back(v.bos_id);
          auto body = parse_ids(f, v, origin, lineno);
          s.tokens.insert(s.tokens.end(), body.begin(), body.end());
          s.validate(v);
          rec.responses.push_back(std::move(s));
        }
      }
      rec.prompt.validate(v);
    } catch (const DatasetParseError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw DatasetParseError(origin, lineno, e.what());
    }
    d.records.push_back(std::move(rec));
  }
  return d;
}

Dataset load_dataset(const std::filesystem::path& path, DatasetKind kind, const Vocab& v) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str(), kind, v, path.string());
}

std::string format_dataset(const Dataset& d) {
  std::ostringstream out;
  for (const auto& r : d.records) {
    for (std::size_t i = 0; i < r.prompt.tokens.size(); ++i) out << (i ? " " : "") << r.prompt.tokens[i];
    if (d.kind != DatasetKind::prompt_only) {
      out << " |";
      for (std::size_t j = 0; j < r.responses.size(); ++j) {
        if (j) out << " ;";
        const auto& t = r.responses[j].tokens;
        for (std::size_t i = 1; i < t.size(); ++i) out << ' ' << t[i];
      }
    }
    out << '\n';
  }
  return out.str();
}

void write_dataset(const std::filesystem::path& path, const Dataset& d) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path.string());
  out << format_dataset(d);
}

const char* to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::prompt_only: return "prompt-only";
    case DatasetKind::prompt_response: return "prompt-response";
    case DatasetKind::teacher_behavior: return "teacher-behavior";
  }
  return "?";
}

DatasetKind dataset_kind_from_string(const std::string& s) {
  if (s == "prompt-only") return DatasetKind::prompt_only;
  if (s == "prompt-response") return DatasetKind::prompt_response;
  if (s == "teacher-behavior") return DatasetKind::teacher_behavior;
  throw std::invalid_argument("unknown dataset kind: " + s);
}

}  // namespace xkd
