#include "xkd/reward_head.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace xkd {

StateActionFeatures state_action_features(const Vocab& v, int k, std::span<const TokenId> ctx, TokenId action) {
  if (static_cast<int>(ctx.size()) > k) ctx = ctx.last(static_cast<std::size_t>(k));
  if (!v.contains(action)) throw std::invalid_argument("action outside vocab");
  StateActionFeatures f;
  f.values.assign(static_cast<std::size_t>((k + 1) * v.size), 0.0);
  const int pad = k - static_cast<int>(ctx.size());
  for (std::size_t j = 0; j < ctx.size(); ++j) {
    if (!v.contains(ctx[j])) throw std::invalid_argument("context token outside vocab");
    f.values[static_cast<std::size_t>((pad + static_cast<int>(j)) * v.size + ctx[j])] = 1.0;
  }
  f.values[static_cast<std::size_t>(k * v.size + action)] = 1.0;
  return f;
}

void RewardPrior::validate() const {
  if (!(std > 0.0) || !std::isfinite(std) || !std::isfinite(mean)) throw std::invalid_argument("reward prior needs a finite mean and positive std");
}

RewardPosterior::RewardPosterior(Vocab vocab, int context_window)
    : vocab_(vocab), k_(context_window), feature_dim_(static_cast<std::size_t>((context_window + 1) * vocab.size)) {
  vocab_.validate();
  if (k_ < 0) throw std::invalid_argument("context window must be non-negative");
  params_.assign(2 * feature_dim_ + 2, 0.0);
}

StateActionFeatures RewardPosterior::features(std::span<const TokenId> prompt, std::span<const TokenId> prefix,
                                              TokenId action) const {
  return state_action_features(vocab_, k_, context_tokens(prompt, prefix, k_), action);
}

RewardPosterior RewardPosterior::random(const Vocab& v, int k, double stddev, Rng& rng) {
  RewardPosterior h(v, k);
  for (double& w : h.params_) w = stddev * rng.normal();
  return h;
}

GaussianParams posterior_params(const RewardPosterior& head, const StateActionFeatures& feat) {
  if (feat.size() != head.feature_dim())
    throw std::invalid_argument("feature dimension " + std::to_string(feat.size()) + " != head dimension " +
                                std::to_string(head.feature_dim()));
  const auto p = head.params();
  GaussianParams g{p[head.b_mu_off()], p[head.b_logvar_off()]};
  for (std::size_t i = 0; i < feat.size(); ++i) {
    g.mu += p[head.w_mu_off() + i] * feat.values[i];
    g.logvar += p[head.w_logvar_off() + i] * feat.values[i];
  }
  return g;
}

double kl_to_prior(double mu, double logvar, const RewardPrior& prior) {
  // Standardize against the prior, then KL(N(m, s^2) || N(0, 1)).
  const double m = (mu - prior.mean) / prior.std;
  const double lv = logvar - 2.0 * std::log(prior.std);
  return 0.5 * (std::exp(lv) + m * m - 1.0 - lv);
}

double log_density(double mu, double logvar, double value) {
  const double d = value - mu;
  return -0.5 * (std::log(2.0 * std::numbers::pi) + logvar + d * d * std::exp(-logvar));
}

GaussianPartials gaussian_partials(double mu, double logvar, double value, const RewardPrior& prior) {
  const double s2 = prior.std * prior.std;
  const double d = value - mu;
  const double inv_var = std::exp(-logvar);
  GaussianPartials g{};
  g.kl_dmu = (mu - prior.mean) / s2;
  g.kl_dlogvar = 0.5 * (std::exp(logvar) / s2 - 1.0);
  g.ld_dmu = d * inv_var;
  g.ld_dlogvar = 0.5 * (d * d * inv_var - 1.0);
  g.ld_dvalue = -d * inv_var;
  return g;
}

void accumulate_head_grad(const RewardPosterior& head, const StateActionFeatures& feat, double dmu, double dlogvar,
                          std::span<double> grad) {
  for (std::size_t i = 0; i < feat.size(); ++i) {
    if (feat.values[i] == 0.0) continue;
    grad[head.w_mu_off() + i] += dmu * feat.values[i];
    grad[head.w_logvar_off() + i] += dlogvar * feat.values[i];
  }
  grad[head.b_mu_off()] += dmu;
  grad[head.b_logvar_off()] += dlogvar;
}

HeadGrad grad_head(const RewardPosterior& head, const StateActionFeatures& feat, double value,
                   const RewardPrior& prior) {
  const auto g = posterior_params(head, feat);
  const auto part = gaussian_partials(g.mu, g.logvar, value, prior);
  HeadGrad out;
  out.kl.assign(head.param_count(), 0.0);
  out.log_density.assign(head.param_count(), 0.0);
  accumulate_head_grad(head, feat, part.kl_dmu, part.kl_dlogvar, out.kl);
  accumulate_head_grad(head, feat, part.ld_dmu, part.ld_dlogvar, out.log_density);
  out.log_density_dvalue = part.ld_dvalue;
  return out;
}

}  // namespace xkd
