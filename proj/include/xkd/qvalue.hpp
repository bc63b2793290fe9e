#pragma once

#include <optional>
#include <span>
#include <vector>

#include "xkd/policy.hpp"

namespace xkd {

struct BoltzmannTemps {
  double tau = 1.0;        // Boltzmann policy temperature
  double tau_prime = 1.0;  // inverse-Boltzmann temperature

  void validate() const;
  bool operator==(const BoltzmannTemps&) const = default;
};

/// Q_a = tau' * p_a - log sum_v exp(tau' * p_v): a log-softmax over scaled
/// probabilities (not logits), so exp(Q) always sums to one.
std::vector<double> q_from_policy(const TokenDist& p, double tau_prime);

/// softmax(tau * Q).
TokenDist boltzmann_policy(std::span<const double> q, double tau);

/// Pull dL/dQ back to dL/dp through q_from_policy.
std::vector<double> q_from_policy_backward(const TokenDist& p, double tau_prime, std::span<const double> dq);

struct TDError {
  double value = 0.0;
  std::size_t step_index = 0;
};

/// delta_t = Q(s_t, y_{t+1}) - gamma * Q(s_{t+1}, y_{t+2}) with Q read off the
/// policy through q_from_policy. The Q of a missing next action is 0.
TDError td_error(const Policy& p_theta, const Prompt& x, const Sequence& y, std::size_t t, double gamma,
                 double tau_prime);

/// The Boltzmann policy recomposed from a language policy's inverse-Boltzmann
/// Q-values.
class BoltzmannView final : public Policy {
 public:
  BoltzmannView(const Policy& base, BoltzmannTemps temps) : base_(base), temps_(temps) { temps_.validate(); }

  const Vocab& vocab() const override { return base_.vocab(); }
  int context_window() const override { return base_.context_window(); }
  TokenDist dist_for_context(std::span<const TokenId> ctx) const override;

 private:
  const Policy& base_;
  BoltzmannTemps temps_;
};

/// Small episodic MDP with explicit transition tables, for checking the
/// Bellman relation between rewards and state-action values.
struct TabularMdp {
  int n_states = 0;
  int n_actions = 0;
  // transition[s][a] = list of (next_state, probability)
  std::vector<std::vector<std::vector<std::pair<int, double>>>> transition;
  std::vector<std::vector<double>> reward;  // reward[s][a]
  std::vector<bool> terminal;               // entering a terminal state ends the episode

  /// Four-state chain: actions left/right, slipping in place with probability
  /// `slip`; the rightmost state is terminal.
  static TabularMdp chain(int n_states, double slip, Rng& rng);
};

/// Exact policy evaluation: solves Q = R + gamma * P_pi Q.
std::vector<std::vector<double>> evaluate_q(const TabularMdp& mdp, const std::vector<std::vector<double>>& policy,
                                            double gamma);

/// E_{s', a'}[Q(s,a) - gamma * Q(s',a')] for every (s, a).
std::vector<std::vector<double>> expected_td(const TabularMdp& mdp, const std::vector<std::vector<double>>& policy,
                                             const std::vector<std::vector<double>>& q, double gamma);

}  // namespace xkd
