#pragma once

#include <vector>

#include "xkd/divergence.hpp"
#include "xkd/oracle.hpp"
#include "xkd/policy.hpp"
#include "xkd/qvalue.hpp"
#include "xkd/reward_head.hpp"

namespace xkd {

/// Which distribution the distillation term sees for the student: the raw
/// language policy, or the Boltzmann policy recomposed from its
/// inverse-Boltzmann Q-values.
enum class StudentView { policy, boltzmann };

const char* to_string(StudentView v);
StudentView student_view_from_string(const std::string& s);

struct XKDConfig {
  double lambda = 0.001;  // experiential weight
  double gamma = 1.0;
  double alpha = 0.5;  // on-policy probability
  double beta = 0.5;
  BoltzmannTemps temps;
  DivergenceMode divergence = DivergenceMode::skew;
  StudentView student_view = StudentView::policy;
  RewardPrior prior;

  void validate() const;
  bool operator==(const XKDConfig&) const = default;
};

struct LossBreakdown {
  double kd_term = 0.0;
  double prior_kl_term = 0.0;
  double td_logdensity_term = 0.0;
  double total = 0.0;
  int n_steps = 0;
};

struct LossResult {
  LossBreakdown loss;
  std::vector<double> grad_theta;  // student parameters
  std::vector<double> grad_phi;    // reward head parameters; empty without a head
};

/// Negative log-likelihood of y under the student, summed over steps.
LossResult loss_seq(const NeuralPolicy& student, const Prompt& x, const Sequence& y, const XKDConfig& cfg);
LossResult loss_sft(const NeuralPolicy& student, const Prompt& x, const Sequence& y);

/// Sum over steps of KL(q_phi || prior) - lambda * log q_phi(delta_t).
/// delta_t carries the theta-dependence; the head sees both terms.
LossResult loss_ex(const NeuralPolicy& student, const RewardPosterior& head, const Prompt& x, const Sequence& y,
                   const XKDConfig& cfg);

/// Sequence-level X-KD, evaluated in a single pass over the step quadruples.
LossResult loss_orm(const NeuralPolicy& student, const RewardPosterior& head, const Prompt& x, const Sequence& y,
                    const XKDConfig& cfg);

/// Summed token-level forward KL(teacher || student) over realized prefixes.
LossResult loss_supervised_kd(const Policy& teacher, const NeuralPolicy& student, const Prompt& x, const Sequence& y,
                              const XKDConfig& cfg);
LossResult loss_supervised_xkd(const Policy& teacher, const NeuralPolicy& student, const RewardPosterior& head,
                               const Prompt& x, const Sequence& y, const XKDConfig& cfg);

/// Summed token-level beta-divergence. Sample paths are constants: gradient
/// flows only through the student's distributions at the realized prefixes.
LossResult loss_gkd(const Policy& teacher, const NeuralPolicy& student, const Prompt& x, const Sequence& y,
                    const XKDConfig& cfg);
LossResult loss_generalized_xkd(const Policy& teacher, const NeuralPolicy& student, const RewardPosterior& head,
                                const Prompt& x, const Sequence& y, const XKDConfig& cfg);

/// -log teacher(y | x) for a student-drawn y. Value only; kd_term is +inf
/// when the teacher gives y zero probability.
LossBreakdown loss_reverse_seq(const Policy& teacher, const Prompt& x, const Sequence& y_student);

/// Exact expectations over an enumerable space.
double expected_seq_loss(const Policy& teacher, const Policy& student, const EnumSpace& space);
double expected_reverse_seq_loss(const Policy& teacher, const Policy& student, const EnumSpace& space);
double loss_general_seq(const Policy& teacher, const Policy& student, BetaWeight beta, const EnumSpace& space);

}  // namespace xkd
