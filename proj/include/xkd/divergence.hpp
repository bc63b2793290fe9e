#pragma once

#include <vector>

#include "xkd/policy.hpp"

namespace xkd {

/// Weight in [0, 1] between the two halves of a beta-divergence.
class BetaWeight {
 public:
  explicit BetaWeight(double beta);
  double value() const { return beta_; }

 private:
  double beta_;
};

enum class DivergenceMode {
  skew,     // beta*KL(p||q) + (1-beta)*KL(q||p)
  mixture,  // beta*KL(p||m) + (1-beta)*KL(q||m), m = beta*p + (1-beta)*q
};

const char* to_string(DivergenceMode m);
DivergenceMode divergence_mode_from_string(const std::string& s);

/// Sum p_i log(p_i / q_i) with 0 log 0 = 0. +inf when q misses p's support.
double kl_tokens(const TokenDist& p, const TokenDist& q);
double beta_skew_div(const TokenDist& p, const TokenDist& q, BetaWeight beta);
double mixture_jsd(const TokenDist& p, const TokenDist& q, BetaWeight beta);
double token_divergence(const TokenDist& p, const TokenDist& q, BetaWeight beta, DivergenceMode mode);

/// Gradient of token_divergence(p, q) with respect to q's probabilities.
/// Entries where q_i = 0 are reported as 0 (they vanish through a softmax).
std::vector<double> token_divergence_grad_q(const TokenDist& p, const TokenDist& q, BetaWeight beta,
                                            DivergenceMode mode);

/// Token-level average over the realized prefixes of y. Empty y gives 0.
double pointwise_kl(const Policy& p, const Policy& q, const Prompt& x, const Sequence& y);
double pointwise_beta_div(const Policy& p, const Policy& q, const Prompt& x, const Sequence& y, BetaWeight beta,
                          DivergenceMode mode);

}  // namespace xkd
