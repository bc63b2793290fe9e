#pragma once

#include <span>
#include <vector>

#include "xkd/core_seq.hpp"
#include "xkd/rng.hpp"

namespace xkd {

/// One-hot of the last k context tokens (left-padded with zero blocks)
/// followed by the one-hot of the action. Dimension (k+1)*V.
struct StateActionFeatures {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
};

StateActionFeatures state_action_features(const Vocab& v, int k, std::span<const TokenId> ctx, TokenId action);

struct RewardPrior {
  double mean = 0.0;
  double std = 1.0;

  void validate() const;
  bool operator==(const RewardPrior&) const = default;
};

struct GaussianParams {
  double mu = 0.0;
  double logvar = 0.0;
};

/// Linear-Gaussian reward posterior over state-action features.
/// Flat layout: w_mu[F], b_mu, w_logvar[F], b_logvar.
class RewardPosterior {
 public:
  RewardPosterior(Vocab vocab, int context_window);

  const Vocab& vocab() const { return vocab_; }
  int context_window() const { return k_; }
  std::size_t feature_dim() const { return feature_dim_; }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::size_t param_count() const { return params_.size(); }

  std::size_t w_mu_off() const { return 0; }
  std::size_t b_mu_off() const { return feature_dim_; }
  std::size_t w_logvar_off() const { return feature_dim_ + 1; }
  std::size_t b_logvar_off() const { return 2 * feature_dim_ + 1; }

  StateActionFeatures features(std::span<const TokenId> prompt, std::span<const TokenId> prefix,
                               TokenId action) const;

  static RewardPosterior random(const Vocab& v, int k, double stddev, Rng& rng);

 private:
  Vocab vocab_;
  int k_;
  std::size_t feature_dim_;
  std::vector<double> params_;
};

GaussianParams posterior_params(const RewardPosterior& head, const StateActionFeatures& feat);

/// KL(N(mu, exp(logvar)) || prior), closed form.
double kl_to_prior(double mu, double logvar, const RewardPrior& prior = {});
double log_density(double mu, double logvar, double value);

/// Partials of the two Gaussian terms w.r.t. (mu, logvar) and the value.
struct GaussianPartials {
  double kl_dmu, kl_dlogvar;
  double ld_dmu, ld_dlogvar, ld_dvalue;
};
GaussianPartials gaussian_partials(double mu, double logvar, double value, const RewardPrior& prior = {});

struct HeadGrad {
  std::vector<double> kl;           // d kl_to_prior / d params
  std::vector<double> log_density;  // d log_density / d params
  double log_density_dvalue = 0.0;
};

HeadGrad grad_head(const RewardPosterior& head, const StateActionFeatures& feat, double value,
                   const RewardPrior& prior = {});

/// Chain upstream (dL/dmu, dL/dlogvar) through posterior_params into grad.
void accumulate_head_grad(const RewardPosterior& head, const StateActionFeatures& feat, double dmu,
                          double dlogvar, std::span<double> grad);

}  // namespace xkd
