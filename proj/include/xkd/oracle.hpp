#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "xkd/divergence.hpp"
#include "xkd/policy.hpp"

namespace xkd {

/// All sequences of up to max_len generated tokens after BOS for one prompt.
/// Sequences that reach max_len without EOS are kept as truncated outcomes.
struct EnumSpace {
  Vocab vocab;
  int max_len = 2;
  Prompt prompt;

  static constexpr double kBudget = 1e7;
  void validate() const;
};

struct WeightedSequence {
  Sequence seq;
  double prob = 0.0;
};

/// Every positive-probability outcome with its path probability.
std::vector<WeightedSequence> enumerate_probs(const Policy& policy, const EnumSpace& space);

using SequenceFn = std::function<double(const Sequence&)>;

double exact_expectation(const Policy& policy, const EnumSpace& space, const SequenceFn& f);

struct McComparison {
  double mc_mean = 0.0;
  double exact = 0.0;
  std::optional<double> stderr_mean;  // undefined for a single draw
};

McComparison mc_vs_exact(const Policy& policy, const EnumSpace& space, const SequenceFn& f, std::size_t n_samples,
                         std::uint64_t seed);

/// Sequence-level KL(p || q) by summing token KLs weighted by p's prefix
/// probabilities over p's generation tree.
double exact_tree_kl(const Policy& p, const Policy& q, const EnumSpace& space);

/// Sequence-level KL(p || q) by enumerating p's outcomes.
double exact_sequence_kl(const Policy& p, const Policy& q, const EnumSpace& space);

/// E_{y~p}[log p(y)].
double expected_self_logprob(const Policy& p, const EnumSpace& space);

struct SeqReformTerms {
  double seq_loss = 0.0;             // E_teacher[-log student(y)]
  double kl = 0.0;                   // KL(teacher || student) over sequences
  double teacher_entropy_term = 0.0; // -E_teacher[log teacher(y)]
};

SeqReformTerms seq_reform_terms(const Policy& teacher, const Policy& student, const EnumSpace& space);

/// |(L_seq(a) - KL(a)) - (L_seq(b) - KL(b))|; zero when the remainder is
/// independent of the student.
double verify_seq_reform(const Policy& teacher, const Policy& student_a, const Policy& student_b,
                         const EnumSpace& space);

struct GseqReformTerms {
  double lhs = 0.0;  // beta*L_seq + (1-beta)*L_rseq
  double rhs = 0.0;  // D_beta-skew - beta*E_t[log t] - (1-beta)*E_s[log s]
};

GseqReformTerms gseq_reform_terms(const Policy& teacher, const Policy& student, BetaWeight beta,
                                  const EnumSpace& space);
double verify_gseq_reform(const Policy& teacher, const Policy& student, BetaWeight beta, const EnumSpace& space);

}  // namespace xkd
