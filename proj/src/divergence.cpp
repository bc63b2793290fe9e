#include "xkd/divergence.hpp"

#include <cmath>
#include <stdexcept>

#include "xkd/numeric.hpp"

namespace xkd {

BetaWeight::BetaWeight(double beta) : beta_(beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must lie in [0, 1]");
}

const char* to_string(DivergenceMode m) { return m == DivergenceMode::skew ? "skew" : "mixture"; }

DivergenceMode divergence_mode_from_string(const std::string& s) {
  if (s == "skew") return DivergenceMode::skew;
  if (s == "mixture") return DivergenceMode::mixture;
  throw std::invalid_argument("unknown divergence mode: " + s);
}

namespace {

void check_pair(const TokenDist& p, const TokenDist& q) {
  if (p.size() != q.size()) throw std::invalid_argument("token distributions differ in size");
}

}  // namespace

double kl_tokens(const TokenDist& p, const TokenDist& q) {
  check_pair(p, q);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.probs[i] <= 0.0) continue;
    if (q.probs[i] <= 0.0) return kInf;
    s += p.probs[i] * std::log(p.probs[i] / q.probs[i]);
  }
  return std::max(s, 0.0);
}

double beta_skew_div(const TokenDist& p, const TokenDist& q, BetaWeight beta) {
  const double b = beta.value();
  // Weight-zero halves are skipped so b=1 and b=0 reduce bit-for-bit.
  if (b == 1.0) return kl_tokens(p, q);
  if (b == 0.0) return kl_tokens(q, p);
  return b * kl_tokens(p, q) + (1.0 - b) * kl_tokens(q, p);
}

double mixture_jsd(const TokenDist& p, const TokenDist& q, BetaWeight beta) {
  check_pair(p, q);
  const double b = beta.value();
  TokenDist m{std::vector<double>(p.size())};
  for (std::size_t i = 0; i < p.size(); ++i) m.probs[i] = b * p.probs[i] + (1.0 - b) * q.probs[i];
  double s = 0.0;
  if (b > 0.0) s += b * kl_tokens(p, m);
  if (b < 1.0) s += (1.0 - b) * kl_tokens(q, m);
  return s;
}

double token_divergence(const TokenDist& p, const TokenDist& q, BetaWeight beta, DivergenceMode mode) {
  return mode == DivergenceMode::skew ? beta_skew_div(p, q, beta) : mixture_jsd(p, q, beta);
}

std::vector<double> token_divergence_grad_q(const TokenDist& p, const TokenDist& q, BetaWeight beta,
                                            DivergenceMode mode) {
  check_pair(p, q);
  const double b = beta.value();
  std::vector<double> g(q.size(), 0.0);
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double pi = p.probs[i], qi = q.probs[i];
    if (qi <= 0.0) {
      if (pi > 0.0 && mode == DivergenceMode::skew && b > 0.0)
        throw SupportViolation("forward KL gradient undefined: student assigns zero probability");
      continue;
    }
    if (mode == DivergenceMode::skew) {
      double gi = 0.0;
      if (b > 0.0) gi += -b * pi / qi;
      if (b < 1.0) {
        if (pi <= 0.0) throw SupportViolation("reverse KL gradient undefined: teacher assigns zero probability");
        gi += (1.0 - b) * (std::log(qi / pi) + 1.0);
      }
      g[i] = gi;
    } else {
      // d/dq_i [b KL(p||m) + (1-b) KL(q||m)] collapses to (1-b) log(q_i / m_i).
      const double mi = b * pi + (1.0 - b) * qi;
      g[i] = b < 1.0 ? (1.0 - b) * std::log(qi / mi) : 0.0;
    }
  }
  return g;
}

double pointwise_beta_div(const Policy& p, const Policy& q, const Prompt& x, const Sequence& y, BetaWeight beta,
                          DivergenceMode mode) {
  y.validate(p.vocab());
  const std::size_t n = y.steps();
  if (n == 0) return 0.0;
  double s = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const auto prefix = std::span(y.tokens).first(t + 1);
    s += token_divergence(next_dist(p, x, prefix), next_dist(q, x, prefix), beta, mode);
  }
  return s / static_cast<double>(n);
}

double pointwise_kl(const Policy& p, const Policy& q, const Prompt& x, const Sequence& y) {
  y.validate(p.vocab());
  const std::size_t n = y.steps();
  if (n == 0) return 0.0;
  double s = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const auto prefix = std::span(y.tokens).first(t + 1);
    s += kl_tokens(next_dist(p, x, prefix), next_dist(q, x, prefix));
  }
  return s / static_cast<double>(n);
}

}  // namespace xkd
