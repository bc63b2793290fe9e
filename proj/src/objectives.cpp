#include "xkd/objectives.hpp"

#include <cmath>
#include <stdexcept>

#include "xkd/numeric.hpp"

namespace xkd {

const char* to_string(StudentView v) { return v == StudentView::policy ? "policy" : "boltzmann"; }

StudentView student_view_from_string(const std::string& s) {
  if (s == "policy") return StudentView::policy;
  if (s == "boltzmann") return StudentView::boltzmann;
  throw std::invalid_argument("unknown student view: " + s);
}

void XKDConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("xkd.lambda must be non-negative");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("xkd.gamma must lie in [0, 1]");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("xkd.alpha must lie in [0, 1]");
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("xkd.beta must lie in [0, 1]");
  temps.validate();
  prior.validate();
}

namespace {

enum class KdKind { none, sequence, forward_kl, beta_divergence };

/// Student forwards at every realized prefix of y, plus per-step logit
/// gradients that are pushed through the network once at the end.
struct Trace {
  std::vector<NeuralPolicy::Forward> fwd;
  std::vector<std::vector<double>> dlogits;
};

Trace run_student(const NeuralPolicy& student, const Prompt& x, const Sequence& y) {
  y.validate(student.vocab());
  Trace tr;
  const std::size_t n = y.steps();
  tr.fwd.reserve(n);
  for (std::size_t t = 0; t < n; ++t)
    tr.fwd.push_back(
        student.forward(context_tokens(x.tokens, std::span(y.tokens).first(t + 1), student.context_window())));
  tr.dlogits.assign(n, std::vector<double>(static_cast<std::size_t>(student.vocab().size), 0.0));
  return tr;
}

void add_to(std::vector<double>& acc, const std::vector<double>& g) {
  for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
}

/// The distribution the distillation term compares against.
TokenDist view_dist(const NeuralPolicy::Forward& f, const XKDConfig& cfg) {
  if (cfg.student_view == StudentView::policy) return f.dist;
  return boltzmann_policy(q_from_policy(f.dist, cfg.temps.tau_prime), cfg.temps.tau);
}

/// dL/d(view dist) -> dL/dlogits.
std::vector<double> view_backward(const NeuralPolicy::Forward& f, const TokenDist& view, std::span<const double> g,
                                  const XKDConfig& cfg) {
  if (cfg.student_view == StudentView::policy) return softmax_backward(f.dist.probs, g);
  const auto dq = softmax_backward(view.probs, g, cfg.temps.tau);
  const auto dp = q_from_policy_backward(f.dist, cfg.temps.tau_prime, dq);
  return softmax_backward(f.dist.probs, dp);
}

LossResult evaluate(KdKind kind, const Policy* teacher, const NeuralPolicy& student, const RewardPosterior* head,
                    const Prompt& x, const Sequence& y, const XKDConfig& cfg) {
  cfg.validate();
  if (teacher && !(teacher->vocab() == student.vocab())) throw std::invalid_argument("teacher/student vocab mismatch");
  if (head && !(head->vocab() == student.vocab())) throw std::invalid_argument("reward head vocab mismatch");

  Trace tr = run_student(student, x, y);
  const std::size_t n = tr.fwd.size();
  const auto& tok = y.tokens;
  const BetaWeight beta(kind == KdKind::forward_kl ? 1.0 : cfg.beta);
  const DivergenceMode mode = kind == KdKind::forward_kl ? DivergenceMode::skew : cfg.divergence;
  const double tp = cfg.temps.tau_prime;

  LossResult r;
  r.loss.n_steps = static_cast<int>(n);
  r.grad_theta.assign(student.param_count(), 0.0);
  if (head) r.grad_phi.assign(head->param_count(), 0.0);

  std::vector<std::vector<double>> q_vals;
  if (head) {
    q_vals.reserve(n);
    for (const auto& f : tr.fwd) q_vals.push_back(q_from_policy(f.dist, tp));
  }

  for (std::size_t t = 0; t < n; ++t) {
    const auto& f = tr.fwd[t];
    const auto a = static_cast<std::size_t>(tok[t + 1]);
    double step_total = 0.0;

    // Distillation term.
    if (kind == KdKind::sequence) {
      if (cfg.student_view == StudentView::policy) {
        const double p = f.dist.probs[a];
        if (p <= 0.0) throw SupportViolation("student assigns zero probability to a realized token");
        const double term = -std::log(p);
        r.loss.kd_term += term;
        step_total += term;
        for (std::size_t i = 0; i < f.dist.size(); ++i) tr.dlogits[t][i] += f.dist.probs[i];
        tr.dlogits[t][a] -= 1.0;
      } else {
        const auto b = view_dist(f, cfg);
        const double term = -std::log(b.probs[a]);
        r.loss.kd_term += term;
        step_total += term;
        // d(-log B_a)/dQ = tau * (B - onehot(a))
        std::vector<double> dq(b.size());
        for (std::size_t i = 0; i < b.size(); ++i) dq[i] = cfg.temps.tau * b.probs[i];
        dq[a] -= cfg.temps.tau;
        add_to(tr.dlogits[t], softmax_backward(f.dist.probs, q_from_policy_backward(f.dist, tp, dq)));
      }
    } else if (kind != KdKind::none) {
      const auto pt = next_dist(*teacher, x, std::span(tok).first(t + 1));
      const auto q = view_dist(f, cfg);
      const double term = token_divergence(pt, q, beta, mode);
      if (!std::isfinite(term))
        throw SupportViolation("divergence is infinite at step " + std::to_string(t) + ": disjoint support");
      r.loss.kd_term += term;
      step_total += term;
      add_to(tr.dlogits[t], view_backward(f, q, token_divergence_grad_q(pt, q, beta, mode), cfg));
    }

    // Experiential term.
    if (head) {
      double delta = q_vals[t][a];
      const bool has_next = t + 1 < n;
      const std::size_t a_next = has_next ? static_cast<std::size_t>(tok[t + 2]) : 0;
      if (has_next) delta -= cfg.gamma * q_vals[t + 1][a_next];

      const auto feat = head->features(x.tokens, std::span(tok).first(t + 1), tok[t + 1]);
      const auto g = posterior_params(*head, feat);
      const double kl = kl_to_prior(g.mu, g.logvar, cfg.prior);
      const double ld = log_density(g.mu, g.logvar, delta);
      r.loss.prior_kl_term += kl;
      r.loss.td_logdensity_term += ld;
      step_total += kl - cfg.lambda * ld;

      const auto part = gaussian_partials(g.mu, g.logvar, delta, cfg.prior);
      accumulate_head_grad(*head, feat, part.kl_dmu - cfg.lambda * part.ld_dmu,
                           part.kl_dlogvar - cfg.lambda * part.ld_dlogvar, r.grad_phi);

      // theta enters only through delta.
      const double d_delta = -cfg.lambda * part.ld_dvalue;
      std::vector<double> dq(f.dist.size(), 0.0);
      dq[a] = d_delta;
      add_to(tr.dlogits[t], softmax_backward(f.dist.probs, q_from_policy_backward(f.dist, tp, dq)));
      if (has_next) {
        const auto& fn = tr.fwd[t + 1];
        std::vector<double> dqn(fn.dist.size(), 0.0);
        dqn[a_next] = -cfg.gamma * d_delta;
        add_to(tr.dlogits[t + 1], softmax_backward(fn.dist.probs, q_from_policy_backward(fn.dist, tp, dqn)));
      }
    }
    r.loss.total += step_total;
  }

  for (std::size_t t = 0; t < n; ++t) student.backward(tr.fwd[t], tr.dlogits[t], r.grad_theta);
  return r;
}

}  // namespace

LossResult loss_seq(const NeuralPolicy& student, const Prompt& x, const Sequence& y, const XKDConfig& cfg) {
  return evaluate(KdKind::sequence, nullptr, student, nullptr, x, y, cfg);
}

LossResult loss_sft(const NeuralPolicy& student, const Prompt& x, const Sequence& y) {
  XKDConfig cfg;
  cfg.student_view = StudentView::policy;
  return loss_seq(student, x, y, cfg);
}

LossResult loss_ex(const NeuralPolicy& student, const RewardPosterior& head, const Prompt& x, const Sequence& y,
                   const XKDConfig& cfg) {
  return evaluate(KdKind::none, nullptr, student, &head, x, y, cfg);
}

LossResult loss_orm(const NeuralPolicy& student, const RewardPosterior& head, const Prompt& x, const Sequence& y,
                    const XKDConfig& cfg) {
  return evaluate(KdKind::sequence, nullptr, student, &head, x, y, cfg);
}

LossResult loss_supervised_kd(const Policy& teacher, const NeuralPolicy& student, const Prompt& x, const Sequence& y,
                              const XKDConfig& cfg) {
  return evaluate(KdKind::forward_kl, &teacher, student, nullptr, x, y, cfg);
}

LossResult loss_supervised_xkd(const Policy& teacher, const NeuralPolicy& student, const RewardPosterior& head,
                               const Prompt& x, const Sequence& y, const XKDConfig& cfg) {
  return evaluate(KdKind::forward_kl, &teacher, student, &head, x, y, cfg);
}

LossResult loss_gkd(const Policy& teacher, const NeuralPolicy& student, const Prompt& x, const Sequence& y,
                    const XKDConfig& cfg) {
  return evaluate(KdKind::beta_divergence, &teacher, student, nullptr, x, y, cfg);
}

LossResult loss_generalized_xkd(const Policy& teacher, const NeuralPolicy& student, const RewardPosterior& head,
                                const Prompt& x, const Sequence& y, const XKDConfig& cfg) {
  return evaluate(KdKind::beta_divergence, &teacher, student, &head, x, y, cfg);
}

LossBreakdown loss_reverse_seq(const Policy& teacher, const Prompt& x, const Sequence& y_student) {
  LossBreakdown l;
  l.kd_term = -seq_logprob(teacher, x, y_student);
  l.total = l.kd_term;
  l.n_steps = static_cast<int>(y_student.steps());
  return l;
}

double expected_seq_loss(const Policy& teacher, const Policy& student, const EnumSpace& space) {
  return exact_expectation(teacher, space, [&](const Sequence& y) { return -seq_logprob(student, space.prompt, y); });
}

double expected_reverse_seq_loss(const Policy& teacher, const Policy& student, const EnumSpace& space) {
  return exact_expectation(student, space,
                           [&](const Sequence& y) { return loss_reverse_seq(teacher, space.prompt, y).kd_term; });
}

double loss_general_seq(const Policy& teacher, const Policy& student, BetaWeight beta, const EnumSpace& space) {
  const double b = beta.value();
  if (b == 1.0) return expected_seq_loss(teacher, student, space);
  if (b == 0.0) return expected_reverse_seq_loss(teacher, student, space);
  return b * expected_seq_loss(teacher, student, space) + (1.0 - b) * expected_reverse_seq_loss(teacher, student, space);
}

}  // namespace xkd
