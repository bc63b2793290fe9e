#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "xkd/core_seq.hpp"
#include "xkd/rng.hpp"

namespace xkd {

/// Next-token distribution, one entry per vocab id.
struct TokenDist {
  std::vector<double> probs;

  std::size_t size() const { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }
  void validate(double tol = 1e-9) const;
  static TokenDist uniform(int n) { return {std::vector<double>(static_cast<std::size_t>(n), 1.0 / n)}; }
};

/// Autoregressive policy over a fixed vocab, conditioned on the last
/// context_window() tokens of prompt ++ prefix.
class Policy {
 public:
  virtual ~Policy() = default;

  virtual const Vocab& vocab() const = 0;
  virtual int context_window() const = 0;
  /// ctx holds at most context_window() tokens, oldest first.
  virtual TokenDist dist_for_context(std::span<const TokenId> ctx) const = 0;
  /// Log-space scores used for temperature scaling. Defaults to log-probs.
  virtual std::vector<double> logits_for_context(std::span<const TokenId> ctx) const;
};

struct GenConfig {
  double temperature = 1.0;
  double top_p = 0.95;
  int max_len = 8;  // generated tokens, BOS excluded
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const GenConfig&) const = default;
};

/// Weight table keyed by context. Unseen contexts are uniform; tokens missing
/// from a stored row get probability zero.
class TabularPolicy final : public Policy {
 public:
  using Row = std::vector<std::pair<TokenId, double>>;

  TabularPolicy(Vocab vocab, int context_window);

  const Vocab& vocab() const override { return vocab_; }
  int context_window() const override { return k_; }
  TokenDist dist_for_context(std::span<const TokenId> ctx) const override;

  void set_row(std::vector<TokenId> ctx, Row weights);
  const std::map<std::vector<TokenId>, Row>& table() const { return table_; }

  static TabularPolicy random(const Vocab& v, int k, Rng& rng, double min_weight = 0.05);

 private:
  Vocab vocab_;
  int k_;
  std::map<std::vector<TokenId>, Row> table_;
};

/// Smoothed n-gram counts over the prompt-response pairs; smoothing > 0 gives
/// every vocab token a positive weight in every observed context.
TabularPolicy fit_ngram(const Dataset& data, const Vocab& v, int context_window, double smoothing);

/// One-hidden-layer tanh network from the concatenated one-hot context to
/// vocab logits.
///
/// Parameter layout (flat): input weights [hidden x k*V] row-major, hidden
/// bias [hidden], output weights [V x hidden] row-major, output bias [V].
/// Missing context slots (short histories) are left-padded with zeros.
class NeuralPolicy final : public Policy {
 public:
  struct Forward {
    std::vector<int> active;  // nonzero input indices
    std::vector<double> hidden;
    std::vector<double> logits;
    TokenDist dist;
  };

  NeuralPolicy(Vocab vocab, int context_window, int hidden_size);

  const Vocab& vocab() const override { return vocab_; }
  int context_window() const override { return k_; }
  int hidden_size() const { return hidden_; }
  TokenDist dist_for_context(std::span<const TokenId> ctx) const override;
  std::vector<double> logits_for_context(std::span<const TokenId> ctx) const override;

  Forward forward(std::span<const TokenId> ctx) const;
  /// Accumulate d(loss)/d(params) into grad given d(loss)/d(logits).
  void backward(const Forward& f, std::span<const double> dlogits, std::span<double> grad) const;

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::size_t param_count() const { return params_.size(); }
  static std::size_t param_count(int k, int vocab_size, int hidden);

  static NeuralPolicy random(const Vocab& v, int k, int hidden, double stddev, Rng& rng);

 private:
  std::size_t w1_off() const { return 0; }
  std::size_t b1_off() const { return static_cast<std::size_t>(hidden_) * k_ * vocab_.size; }
  std::size_t w2_off() const { return b1_off() + hidden_; }
  std::size_t b2_off() const { return w2_off() + static_cast<std::size_t>(vocab_.size) * hidden_; }

  Vocab vocab_;
  int k_;
  int hidden_;
  std::vector<double> params_;
};

TokenDist next_dist(const Policy& policy, const Prompt& x, std::span<const TokenId> prefix);

/// Sum of per-step log-probabilities of the realized tokens. Returns -inf
/// when a realized token has probability zero.
double seq_logprob(const Policy& policy, const Prompt& x, const Sequence& y);

/// Temperature rescaling then nucleus truncation; argmax below 1e-6.
TokenId sample_token(const Policy& policy, std::span<const TokenId> ctx, const GenConfig& cfg, Rng& rng);
TokenDist sampling_dist(const Policy& policy, std::span<const TokenId> ctx, const GenConfig& cfg);
Sequence sample(const Policy& policy, const Prompt& x, const GenConfig& cfg, Rng& rng);
Sequence sample(const Policy& policy, const Prompt& x, const GenConfig& cfg);

std::vector<double> grad_seq_logprob(const NeuralPolicy& policy, const Prompt& x, const Sequence& y);

}  // namespace xkd
