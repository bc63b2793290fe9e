#include "xkd/verify.hpp"

#include <algorithm>
#include <cmath>

#include "xkd/objectives.hpp"
#include "xkd/oracle.hpp"
#include "xkd/qvalue.hpp"

namespace xkd {

namespace {

std::vector<std::vector<double>> random_mdp_policy(int n_states, int n_actions, Rng& rng) {
  std::vector<std::vector<double>> pi(static_cast<std::size_t>(n_states));
  for (auto& row : pi) {
    double z = 0.0;
    for (int a = 0; a < n_actions; ++a) z += row.emplace_back(0.1 + rng.uniform());
    for (double& p : row) p /= z;
  }
  return pi;
}

}  // namespace

std::vector<CheckResult> run_verify_suite(std::uint64_t seed, int instances) {
  Rng rng(seed, 500);
  const Vocab v4{4, 0, 1};
  CheckResult seq{"seq_reform", 0.0, 1e-9};
  CheckResult seq_direct{"seq_reform_entropy", 0.0, 1e-9};
  CheckResult g0{"gseq_reform beta=0", 0.0, 1e-9};
  CheckResult g5{"gseq_reform beta=0.5", 0.0, 1e-9};
  CheckResult g1{"gseq_reform beta=1", 0.0, 1e-9};
  CheckResult mass{"enumeration_mass", 0.0, 1e-9};
  for (int i = 0; i < instances; ++i) {
    const auto teacher = TabularPolicy::random(v4, 2, rng);
    const auto a = NeuralPolicy::random(v4, 2, 8, 1.0, rng);
    const auto b = NeuralPolicy::random(v4, 2, 8, 1.0, rng);
    const EnumSpace space{v4, 3, Prompt{{2, 3}}};
    seq.residual = std::max(seq.residual, verify_seq_reform(teacher, a, b, space));
    const auto terms = seq_reform_terms(teacher, a, space);
    seq_direct.residual = std::max(
        seq_direct.residual, std::abs((terms.seq_loss - terms.kl) + expected_self_logprob(teacher, space)));
    g0.residual = std::max(g0.residual, verify_gseq_reform(teacher, a, BetaWeight(0.0), space));
    g5.residual = std::max(g5.residual, verify_gseq_reform(teacher, a, BetaWeight(0.5), space));
    g1.residual = std::max(g1.residual, verify_gseq_reform(teacher, a, BetaWeight(1.0), space));
    double total = 0.0;
    for (const auto& ws : enumerate_probs(a, space)) total += ws.prob;
    mass.residual = std::max(mass.residual, std::abs(total - 1.0));
  }

  std::vector<CheckResult> out{seq, seq_direct, g0, g5, g1, mass};
  for (double gamma : {0.9, 1.0}) {
    CheckResult bell{"bellman gamma=" + std::string(gamma == 1.0 ? "1.0" : "0.9"), 0.0, 1e-9};
    for (int i = 0; i < instances; ++i) {
      const auto mdp = TabularMdp::chain(4, 0.2, rng);
      const auto pi = random_mdp_policy(mdp.n_states, mdp.n_actions, rng);
      const auto q = evaluate_q(mdp, pi, gamma);
      const auto td = expected_td(mdp, pi, q, gamma);
      for (int s = 0; s < mdp.n_states; ++s) {
        if (mdp.terminal[static_cast<std::size_t>(s)]) continue;
        for (int a = 0; a < mdp.n_actions; ++a)
          bell.residual = std::max(bell.residual, std::abs(td[s][a] - mdp.reward[s][a]));
      }
    }
    out.push_back(bell);
  }

  CheckResult dec{"orm = seq + ex", 0.0, 1e-12};
  const Vocab v6{6, 0, 1};
  XKDConfig cfg;
  for (int i = 0; i < instances; ++i) {
    const auto student = NeuralPolicy::random(v6, 2, 8, 0.5, rng);
    const auto head = RewardPosterior::random(v6, 2, 0.3, rng);
    Prompt x{{2, 3}};
    const auto y = sample(student, x, GenConfig{1.0, 1.0, 4, 0}, rng);
    const double orm = loss_orm(student, head, x, y, cfg).loss.total;
    const double split = loss_seq(student, x, y, cfg).loss.total + loss_ex(student, head, x, y, cfg).loss.total;
    dec.residual = std::max(dec.residual, std::abs(orm - split));
  }
  out.push_back(dec);
  return out;
}

}  // namespace xkd
