#include "xkd/checkpoint.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace xkd {

CheckpointError::CheckpointError(const std::string& path, std::size_t line, const std::string& what)
    : std::runtime_error(path + ":" + std::to_string(line) + ": " + what) {}

namespace {

void put(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g\n", v);
  out += buf;
}

void append_head(std::string& out, const RewardPosterior* head) {
  if (!head) return;
  out += "rewardhead F=" + std::to_string(head->feature_dim()) + "\n";
  for (double p : head->params()) put(out, p);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

class Reader {
 public:
  Reader(const std::string& text, std::string origin) : in_(text), origin_(std::move(origin)) {}

  bool next(std::string& line) {
    while (std::getline(in_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") != std::string::npos) return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const { throw CheckpointError(origin_, line_no_, what); }

  /// Parse "name a=1 b=2" into key/value pairs after checking the tag.
  std::map<std::string, long> header(const std::string& line, const std::string& tag) {
    auto words = split_ws(line);
    if (words.empty() || words[0] != tag) fail("expected '" + tag + "' header");
    std::map<std::string, long> kv;
    for (std::size_t i = 1; i < words.size(); ++i) {
      const auto eq = words[i].find('=');
      if (eq == std::string::npos) fail("malformed header field '" + words[i] + "'");
      kv[words[i].substr(0, eq)] = integer(words[i].substr(eq + 1));
    }
    return kv;
  }

  long need(const std::map<std::string, long>& kv, const std::string& key) const {
    auto it = kv.find(key);
    if (it == kv.end()) fail("header is missing '" + key + "'");
    return it->second;
  }

  long integer(const std::string& s) const {
    long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) fail("expected an integer, got '" + s + "'");
    return v;
  }

  double real(const std::string& s) const {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      fail("expected a number, got '" + s + "'");
    }
  }

  void read_params(std::span<double> dst) {
    std::string line;
    for (double& p : dst) {
      if (!next(line)) fail("truncated parameter list");
      auto w = split_ws(line);
      if (w.size() != 1) fail("expected one parameter per line");
      p = real(w[0]);
    }
  }

 private:
  std::istringstream in_;
  std::string origin_;
  std::size_t line_no_ = 0;
};

}  // namespace

std::string format_checkpoint(const NeuralPolicy& policy, const RewardPosterior* head) {
  std::string out = "neural k=" + std::to_string(policy.context_window()) +
                    " hidden=" + std::to_string(policy.hidden_size()) +
                    " vocab=" + std::to_string(policy.vocab().size) + "\n";
  for (double p : policy.params()) put(out, p);
  append_head(out, head);
  return out;
}

std::string format_checkpoint(const TabularPolicy& policy, const RewardPosterior* head) {
  std::string out = "tabular k=" + std::to_string(policy.context_window()) +
                    " vocab=" + std::to_string(policy.vocab().size) + "\n";
  char buf[64];
  for (const auto& [ctx, row] : policy.table()) {
    for (std::size_t i = 0; i < ctx.size(); ++i) out += (i ? " " : "") + std::to_string(ctx[i]);
    out += " :";
    for (const auto& [tok, w] : row) {
      std::snprintf(buf, sizeof buf, " %d %.17g", tok, w);
      out += buf;
    }
    out += "\n";
  }
  append_head(out, head);
  return out;
}

Checkpoint parse_checkpoint(const std::string& text, const Vocab& v, const std::string& origin) {
  v.validate();
  Reader rd(text, origin);
  std::string line;
  if (!rd.next(line)) rd.fail("empty checkpoint");
  const auto kind = split_ws(line).front();

  auto check_vocab = [&](const std::map<std::string, long>& kv) {
    if (rd.need(kv, "vocab") != v.size)
      rd.fail("checkpoint vocab " + std::to_string(rd.need(kv, "vocab")) + " does not match configured " +
              std::to_string(v.size));
  };

  std::optional<Checkpoint> ck;
  bool pending_head = false;
  if (kind == "neural") {
    const auto kv = rd.header(line, "neural");
    check_vocab(kv);
    NeuralPolicy p(v, static_cast<int>(rd.need(kv, "k")), static_cast<int>(rd.need(kv, "hidden")));
    rd.read_params(p.params());
    ck.emplace(Checkpoint{std::move(p), std::nullopt});
    pending_head = rd.next(line);
  } else if (kind == "tabular") {
    const auto kv = rd.header(line, "tabular");
    check_vocab(kv);
    TabularPolicy p(v, static_cast<int>(rd.need(kv, "k")));
    while ((pending_head = rd.next(line))) {
      if (split_ws(line).front() == "rewardhead") break;
      const auto colon = line.find(':');
      if (colon == std::string::npos) rd.fail("tabular row needs ':'");
      std::vector<TokenId> ctx;
      for (const auto& w : split_ws(line.substr(0, colon))) ctx.push_back(static_cast<TokenId>(rd.integer(w)));
      const auto rest = split_ws(line.substr(colon + 1));
      if (rest.size() % 2 != 0) rd.fail("tabular row needs id/weight pairs");
      TabularPolicy::Row row;
      for (std::size_t i = 0; i < rest.size(); i += 2)
        row.emplace_back(static_cast<TokenId>(rd.integer(rest[i])), rd.real(rest[i + 1]));
      try {
        p.set_row(std::move(ctx), std::move(row));
      } catch (const std::invalid_argument& e) {
        rd.fail(e.what());
      }
    }
    ck.emplace(Checkpoint{std::move(p), std::nullopt});
  } else {
    rd.fail("unknown checkpoint kind '" + kind + "'");
  }

  if (pending_head) {
    const auto kv = rd.header(line, "rewardhead");
    // F = (k + 1) * V
    const long f = rd.need(kv, "F");
    if (f <= 0 || f % v.size != 0) rd.fail("reward head size F=" + std::to_string(f) + " is not a multiple of the vocab");
    RewardPosterior head(v, static_cast<int>(f / v.size - 1));
    rd.read_params(head.params());
    ck->head.emplace(std::move(head));
    if (rd.next(line)) rd.fail("trailing content after reward head");
  }
  return std::move(*ck);
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NeuralPolicy& policy, const RewardPosterior* head) {
  write_text(path, format_checkpoint(policy, head));
}

void save_checkpoint(const std::filesystem::path& path, const TabularPolicy& policy, const RewardPosterior* head) {
  write_text(path, format_checkpoint(policy, head));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const Vocab& v) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str(), v, path.string());
}

}  // namespace xkd
