#include "xkd/qvalue.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "xkd/numeric.hpp"

namespace xkd {

void BoltzmannTemps::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  if (!(tau_prime > 0.0)) throw std::invalid_argument("tau_prime must be positive");
}

std::vector<double> q_from_policy(const TokenDist& p, double tau_prime) {
  return log_softmax(p.probs, tau_prime);
}

TokenDist boltzmann_policy(std::span<const double> q, double tau) {
  for (double v : q)
    if (!std::isfinite(v)) throw std::invalid_argument("Q-values must be finite");
  return {softmax(q, tau)};
}

std::vector<double> q_from_policy_backward(const TokenDist& p, double tau_prime, std::span<const double> dq) {
  // dQ_i/dp_j = tau' * (1[i=j] - s_j), s = softmax(tau' p)
  const auto s = softmax(p.probs, tau_prime);
  double total = 0.0;
  for (double g : dq) total += g;
  std::vector<double> dp(dq.size());
  for (std::size_t j = 0; j < dq.size(); ++j) dp[j] = tau_prime * (dq[j] - s[j] * total);
  return dp;
}

TDError td_error(const Policy& p_theta, const Prompt& x, const Sequence& y, std::size_t t, double gamma,
                 double tau_prime) {
  y.validate(p_theta.vocab());
  if (t >= y.steps()) throw std::out_of_range("TD step index past the last generated token");
  const auto& tok = y.tokens;
  const auto q_now = q_from_policy(next_dist(p_theta, x, std::span(tok).first(t + 1)), tau_prime);
  double delta = q_now[static_cast<std::size_t>(tok[t + 1])];
  if (t + 2 < tok.size()) {
    const auto q_next = q_from_policy(next_dist(p_theta, x, std::span(tok).first(t + 2)), tau_prime);
    delta -= gamma * q_next[static_cast<std::size_t>(tok[t + 2])];
  }
  return {delta, t};
}

TokenDist BoltzmannView::dist_for_context(std::span<const TokenId> ctx) const {
  return boltzmann_policy(q_from_policy(base_.dist_for_context(ctx), temps_.tau_prime), temps_.tau);
}

TabularMdp TabularMdp::chain(int n_states, double slip, Rng& rng) {
  if (n_states < 2) throw std::invalid_argument("chain needs at least two states");
  TabularMdp m;
  m.n_states = n_states;
  m.n_actions = 2;
  m.transition.assign(static_cast<std::size_t>(n_states), std::vector<std::vector<std::pair<int, double>>>(2));
  m.reward.assign(static_cast<std::size_t>(n_states), std::vector<double>(2, 0.0));
  m.terminal.assign(static_cast<std::size_t>(n_states), false);
  m.terminal.back() = true;
  for (int s = 0; s + 1 < n_states; ++s) {
    for (int a = 0; a < 2; ++a) {
      const int target = a == 0 ? std::max(0, s - 1) : s + 1;
      auto& row = m.transition[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
      if (target == s) {
        row.emplace_back(s, 1.0);
      } else {
        row.emplace_back(target, 1.0 - slip);
        row.emplace_back(s, slip);
      }
      m.reward[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] = 2.0 * rng.uniform() - 1.0;
    }
  }
  return m;
}

std::vector<std::vector<double>> evaluate_q(const TabularMdp& mdp, const std::vector<std::vector<double>>& policy,
                                            double gamma) {
  const int S = mdp.n_states, A = mdp.n_actions;
  const int n = S * A;
  Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  auto idx = [A](int s, int a) { return s * A + a; };
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      if (mdp.terminal[static_cast<std::size_t>(s)]) continue;  // Q(terminal, .) = 0
      rhs(idx(s, a)) = mdp.reward[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
      for (const auto& [sn, pr] : mdp.transition[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)]) {
        if (mdp.terminal[static_cast<std::size_t>(sn)]) continue;
        for (int an = 0; an < A; ++an)
          lhs(idx(s, a), idx(sn, an)) -= gamma * pr * policy[static_cast<std::size_t>(sn)][static_cast<std::size_t>(an)];
      }
    }
  }
  const Eigen::VectorXd sol = lhs.fullPivLu().solve(rhs);
  std::vector<std::vector<double>> q(static_cast<std::size_t>(S), std::vector<double>(static_cast<std::size_t>(A)));
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) q[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] = sol(idx(s, a));
  return q;
}

std::vector<std::vector<double>> expected_td(const TabularMdp& mdp, const std::vector<std::vector<double>>& policy,
                                             const std::vector<std::vector<double>>& q, double gamma) {
  auto out = q;
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      double next = 0.0;
      for (const auto& [sn, pr] : mdp.transition[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)]) {
        if (mdp.terminal[static_cast<std::size_t>(sn)]) continue;
        for (int an = 0; an < mdp.n_actions; ++an)
          next += pr * policy[static_cast<std::size_t>(sn)][static_cast<std::size_t>(an)] *
                  q[static_cast<std::size_t>(sn)][static_cast<std::size_t>(an)];
      }
      out[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] =
          q[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] - gamma * next;
    }
  }
  return out;
}

}  // namespace xkd
