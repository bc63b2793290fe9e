#include "xkd/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "xkd/numeric.hpp"

namespace xkd {

void TokenDist::validate(double tol) const {
  double s = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw std::invalid_argument("token distribution has a negative or NaN entry");
    s += p;
  }
  if (std::abs(s - 1.0) > tol) throw std::invalid_argument("token distribution does not sum to 1");
}

std::vector<double> Policy::logits_for_context(std::span<const TokenId> ctx) const {
  auto d = dist_for_context(ctx);
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = d.probs[i] > 0.0 ? std::log(d.probs[i]) : -kInf;
  return out;
}

void GenConfig::validate() const {
  if (!(temperature > 0.0)) throw std::invalid_argument("gen.temperature must be positive");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument("gen.top_p must lie in (0, 1]");
  if (max_len <= 0) throw std::invalid_argument("gen.max_len must be positive");
}

// ---------------------------------------------------------------- tabular

TabularPolicy::TabularPolicy(Vocab vocab, int context_window) : vocab_(vocab), k_(context_window) {
  vocab_.validate();
  if (k_ < 0) throw std::invalid_argument("context window must be non-negative");
}

TokenDist TabularPolicy::dist_for_context(std::span<const TokenId> ctx) const {
  const std::vector<TokenId> key(ctx.begin(), ctx.end());
  auto it = table_.find(key);
  if (it == table_.end()) return TokenDist::uniform(vocab_.size);
  TokenDist d{std::vector<double>(static_cast<std::size_t>(vocab_.size), 0.0)};
  double total = 0.0;
  for (const auto& [tok, w] : it->second) total += w;
  for (const auto& [tok, w] : it->second) d.probs[static_cast<std::size_t>(tok)] += w / total;
  return d;
}

void TabularPolicy::set_row(std::vector<TokenId> ctx, Row weights) {
  if (static_cast<int>(ctx.size()) > k_) throw std::invalid_argument("context longer than window");
  if (weights.empty()) throw std::invalid_argument("empty weight row");
  for (TokenId t : ctx)
    if (!vocab_.contains(t)) throw std::invalid_argument("context token outside vocab");
  for (const auto& [tok, w] : weights) {
    if (!vocab_.contains(tok)) throw std::invalid_argument("row token outside vocab");
    if (!(w > 0.0) || !std::isfinite(w)) throw std::invalid_argument("tabular weights must be positive");
  }
  table_[std::move(ctx)] = std::move(weights);
}

namespace {

void all_contexts(int V, int len, std::vector<TokenId>& cur, std::vector<std::vector<TokenId>>& out) {
  if (static_cast<int>(cur.size()) == len) {
    out.push_back(cur);
    return;
  }
  for (TokenId t = 0; t < V; ++t) {
    cur.push_back(t);
    all_contexts(V, len, cur, out);
    cur.pop_back();
  }
}

}  // namespace

TabularPolicy TabularPolicy::random(const Vocab& v, int k, Rng& rng, double min_weight) {
  TabularPolicy p(v, k);
  std::vector<std::vector<TokenId>> ctxs;
  std::vector<TokenId> cur;
  for (int len = 0; len <= k; ++len) all_contexts(v.size, len, cur, ctxs);
  for (auto& c : ctxs) {
    Row row;
    for (TokenId t = 0; t < v.size; ++t) row.emplace_back(t, min_weight + rng.uniform());
    p.set_row(std::move(c), std::move(row));
  }
  return p;
}

TabularPolicy fit_ngram(const Dataset& data, const Vocab& v, int k, double smoothing) {
  if (smoothing < 0.0) throw std::invalid_argument("smoothing must be non-negative");
  std::map<std::vector<TokenId>, std::vector<double>> counts;
  for (const auto& rec : data.records) {
    for (const auto& y : rec.responses) {
      for (std::size_t t = 0; t + 1 < y.tokens.size(); ++t) {
        auto ctx = context_tokens(rec.prompt.tokens, std::span(y.tokens).first(t + 1), k);
        auto& row = counts[ctx];
        row.resize(static_cast<std::size_t>(v.size), 0.0);
        row[static_cast<std::size_t>(y.tokens[t + 1])] += 1.0;
      }
    }
  }
  TabularPolicy p(v, k);
  for (auto& [ctx, row] : counts) {
    TabularPolicy::Row weights;
    for (TokenId t = 0; t < v.size; ++t) {
      const double w = row[static_cast<std::size_t>(t)] + smoothing;
      if (w > 0.0) weights.emplace_back(t, w);
    }
    p.set_row(ctx, std::move(weights));
  }
  return p;
}

// ---------------------------------------------------------------- neural

NeuralPolicy::NeuralPolicy(Vocab vocab, int context_window, int hidden_size)
    : vocab_(vocab), k_(context_window), hidden_(hidden_size) {
  vocab_.validate();
  if (k_ < 0) throw std::invalid_argument("context window must be non-negative");
  if (hidden_ <= 0) throw std::invalid_argument("hidden size must be positive");
  params_.assign(param_count(k_, vocab_.size, hidden_), 0.0);
}

std::size_t NeuralPolicy::param_count(int k, int V, int H) {
  const auto k_ = static_cast<std::size_t>(k), v = static_cast<std::size_t>(V), h = static_cast<std::size_t>(H);
  return (k_ * v) * h + h + h * v + v;
}

NeuralPolicy NeuralPolicy::random(const Vocab& v, int k, int hidden, double stddev, Rng& rng) {
  NeuralPolicy p(v, k, hidden);
  for (double& w : p.params_) w = stddev * rng.normal();
  return p;
}

NeuralPolicy::Forward NeuralPolicy::forward(std::span<const TokenId> ctx) const {
  if (static_cast<int>(ctx.size()) > k_) ctx = ctx.last(static_cast<std::size_t>(k_));
  Forward f;
  const int pad = k_ - static_cast<int>(ctx.size());
  for (std::size_t j = 0; j < ctx.size(); ++j) {
    if (!vocab_.contains(ctx[j])) throw std::invalid_argument("context token outside vocab");
    f.active.push_back((pad + static_cast<int>(j)) * vocab_.size + ctx[j]);
  }
  const std::size_t in_dim = static_cast<std::size_t>(k_) * vocab_.size;
  const auto H = static_cast<std::size_t>(hidden_);
  const auto V = static_cast<std::size_t>(vocab_.size);

  f.hidden.resize(H);
  for (std::size_t h = 0; h < H; ++h) {
    double z = params_[b1_off() + h];
    for (int a : f.active) z += params_[w1_off() + h * in_dim + static_cast<std::size_t>(a)];
    f.hidden[h] = std::tanh(z);
  }
  f.logits.resize(V);
  for (std::size_t o = 0; o < V; ++o) {
    double z = params_[b2_off() + o];
    const double* row = &params_[w2_off() + o * H];
    for (std::size_t h = 0; h < H; ++h) z += row[h] * f.hidden[h];
    f.logits[o] = z;
  }
  f.dist.probs = softmax(f.logits);
  return f;
}

void NeuralPolicy::backward(const Forward& f, std::span<const double> dlogits, std::span<double> grad) const {
  const std::size_t in_dim = static_cast<std::size_t>(k_) * vocab_.size;
  const auto H = static_cast<std::size_t>(hidden_);
  const auto V = static_cast<std::size_t>(vocab_.size);
  std::vector<double> dhidden(H, 0.0);
  for (std::size_t o = 0; o < V; ++o) {
    const double g = dlogits[o];
    grad[b2_off() + o] += g;
    double* grow = &grad[w2_off() + o * H];
    const double* prow = &params_[w2_off() + o * H];
    for (std::size_t h = 0; h < H; ++h) {
      grow[h] += g * f.hidden[h];
      dhidden[h] += g * prow[h];
    }
  }
  for (std::size_t h = 0; h < H; ++h) {
    const double dz = dhidden[h] * (1.0 - f.hidden[h] * f.hidden[h]);
    grad[b1_off() + h] += dz;
    for (int a : f.active) grad[w1_off() + h * in_dim + static_cast<std::size_t>(a)] += dz;
  }
}

TokenDist NeuralPolicy::dist_for_context(std::span<const TokenId> ctx) const { return forward(ctx).dist; }

std::vector<double> NeuralPolicy::logits_for_context(std::span<const TokenId> ctx) const {
  return forward(ctx).logits;
}

// ---------------------------------------------------------------- free ops

TokenDist next_dist(const Policy& policy, const Prompt& x, std::span<const TokenId> prefix) {
  if (prefix.empty() || prefix.front() != policy.vocab().bos_id)
    throw std::invalid_argument("prefix must start with BOS");
  return policy.dist_for_context(context_tokens(x.tokens, prefix, policy.context_window()));
}

double seq_logprob(const Policy& policy, const Prompt& x, const Sequence& y) {
  y.validate(policy.vocab());
  double lp = 0.0;
  for (std::size_t t = 0; t + 1 < y.tokens.size(); ++t) {
    const auto d = next_dist(policy, x, std::span(y.tokens).first(t + 1));
    const double p = d.probs[static_cast<std::size_t>(y.tokens[t + 1])];
    if (p <= 0.0) return -kInf;
    lp += std::log(p);
  }
  return lp;
}

TokenDist sampling_dist(const Policy& policy, std::span<const TokenId> ctx, const GenConfig& cfg) {
  const auto V = static_cast<std::size_t>(policy.vocab().size);
  TokenDist d;
  if (cfg.temperature < 1e-6) {
    const auto logits = policy.logits_for_context(ctx);
    const auto best = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    d.probs.assign(V, 0.0);
    d.probs[best] = 1.0;
    return d;
  }
  if (cfg.temperature == 1.0) {
    d = policy.dist_for_context(ctx);
  } else {
    d.probs = softmax(policy.logits_for_context(ctx), 1.0 / cfg.temperature);
  }
  if (cfg.top_p >= 1.0) return d;

  std::vector<std::size_t> order(V);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d.probs[a] > d.probs[b]; });
  double mass = 0.0;
  std::size_t keep = 0;
  while (keep < V && mass < cfg.top_p) mass += d.probs[order[keep++]];
  TokenDist out{std::vector<double>(V, 0.0)};
  for (std::size_t i = 0; i < keep; ++i) out.probs[order[i]] = d.probs[order[i]] / mass;
  return out;
}

TokenId sample_token(const Policy& policy, std::span<const TokenId> ctx, const GenConfig& cfg, Rng& rng) {
  const auto d = sampling_dist(policy, ctx, cfg);
  const double u = rng.uniform();
  double acc = 0.0;
  TokenId last = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.probs[i] <= 0.0) continue;
    acc += d.probs[i];
    last = static_cast<TokenId>(i);
    if (u < acc) return last;
  }
  return last;
}

Sequence sample(const Policy& policy, const Prompt& x, const GenConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto& v = policy.vocab();
  Sequence y{{v.bos_id}};
  while (static_cast<int>(y.steps()) < cfg.max_len) {
    const auto ctx = context_tokens(x.tokens, y.tokens, policy.context_window());
    const TokenId t = sample_token(policy, ctx, cfg, rng);
    y.tokens.push_back(t);
    if (t == v.eos_id) break;
  }
  return y;
}

Sequence sample(const Policy& policy, const Prompt& x, const GenConfig& cfg) {
  Rng rng(cfg.seed);
  return sample(policy, x, cfg, rng);
}

std::vector<double> grad_seq_logprob(const NeuralPolicy& policy, const Prompt& x, const Sequence& y) {
  y.validate(policy.vocab());
  std::vector<double> grad(policy.param_count(), 0.0);
  for (std::size_t t = 0; t + 1 < y.tokens.size(); ++t) {
    const auto f = policy.forward(context_tokens(x.tokens, std::span(y.tokens).first(t + 1), policy.context_window()));
    std::vector<double> dlogits(f.dist.probs.size());
    for (std::size_t i = 0; i < dlogits.size(); ++i) dlogits[i] = -f.dist.probs[i];
    dlogits[static_cast<std::size_t>(y.tokens[t + 1])] += 1.0;
    policy.backward(f, dlogits, grad);
  }
  return grad;
}

}  // namespace xkd
