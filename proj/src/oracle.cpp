#include "xkd/oracle.hpp"

#include <cmath>
#include <stdexcept>

#include "xkd/numeric.hpp"

namespace xkd {

void EnumSpace::validate() const {
  vocab.validate();
  prompt.validate(vocab);
  if (max_len <= 0) throw std::invalid_argument("enumeration max_len must be positive");
  if (std::pow(static_cast<double>(vocab.size), max_len) > kBudget)
    throw std::invalid_argument("enumeration budget exceeded: " + std::to_string(vocab.size) + "^" +
                                std::to_string(max_len) + " > 1e7");
}

namespace {

bool is_leaf(const std::vector<TokenId>& prefix, const EnumSpace& space) {
  const auto steps = static_cast<int>(prefix.size()) - 1;
  return steps >= space.max_len || (steps > 0 && prefix.back() == space.vocab.eos_id);
}

/// Depth-first walk over positive-probability branches. visit_node sees each
/// internal node with its prefix probability; visit_leaf sees each outcome.
template <class Node, class Leaf>
void walk(const Policy& policy, const EnumSpace& space, std::vector<TokenId>& prefix, double prob, Node&& visit_node,
          Leaf&& visit_leaf) {
  if (is_leaf(prefix, space)) {
    visit_leaf(prefix, prob);
    return;
  }
  const auto dist = next_dist(policy, space.prompt, prefix);
  visit_node(prefix, prob, dist);
  for (std::size_t tok = 0; tok < dist.size(); ++tok) {
    if (dist.probs[tok] <= 0.0) continue;
    prefix.push_back(static_cast<TokenId>(tok));
    walk(policy, space, prefix, prob * dist.probs[tok], visit_node, visit_leaf);
    prefix.pop_back();
  }
}

void require_same_vocab(const Policy& policy, const EnumSpace& space) {
  if (!(policy.vocab() == space.vocab)) throw std::invalid_argument("policy vocab differs from enumeration space");
}

}  // namespace

std::vector<WeightedSequence> enumerate_probs(const Policy& policy, const EnumSpace& space) {
  space.validate();
  require_same_vocab(policy, space);
  std::vector<WeightedSequence> out;
  std::vector<TokenId> prefix{space.vocab.bos_id};
  walk(
      policy, space, prefix, 1.0, [](const auto&, double, const TokenDist&) {},
      [&](const std::vector<TokenId>& p, double prob) { out.push_back({Sequence{p}, prob}); });
  return out;
}

double exact_expectation(const Policy& policy, const EnumSpace& space, const SequenceFn& f) {
  double s = 0.0;
  for (const auto& ws : enumerate_probs(policy, space)) s += ws.prob * f(ws.seq);
  return s;
}

McComparison mc_vs_exact(const Policy& policy, const EnumSpace& space, const SequenceFn& f, std::size_t n_samples,
                         std::uint64_t seed) {
  if (n_samples == 0) throw std::invalid_argument("need at least one sample");
  McComparison r;
  r.exact = exact_expectation(policy, space, f);
  const GenConfig gen{1.0, 1.0, space.max_len, seed};
  Rng rng(seed);
  // Welford running moments.
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double v = f(sample(policy, space.prompt, gen, rng));
    const double d = v - mean;
    mean += d / static_cast<double>(i + 1);
    m2 += d * (v - mean);
  }
  r.mc_mean = mean;
  if (n_samples > 1) r.stderr_mean = std::sqrt(m2 / static_cast<double>(n_samples - 1) / static_cast<double>(n_samples));
  return r;
}

double exact_tree_kl(const Policy& p, const Policy& q, const EnumSpace& space) {
  space.validate();
  require_same_vocab(p, space);
  double kl = 0.0;
  std::vector<TokenId> prefix{space.vocab.bos_id};
  walk(
      p, space, prefix, 1.0,
      [&](const std::vector<TokenId>& pre, double prob, const TokenDist& pd) {
        kl += prob * kl_tokens(pd, next_dist(q, space.prompt, pre));
      },
      [](const auto&, double) {});
  return kl;
}

double exact_sequence_kl(const Policy& p, const Policy& q, const EnumSpace& space) {
  double kl = 0.0;
  for (const auto& ws : enumerate_probs(p, space)) {
    const double lq = seq_logprob(q, space.prompt, ws.seq);
    if (lq == -kInf) return kInf;
    kl += ws.prob * (std::log(ws.prob) - lq);
  }
  return kl;
}

double expected_self_logprob(const Policy& p, const EnumSpace& space) {
  double s = 0.0;
  for (const auto& ws : enumerate_probs(p, space)) s += ws.prob * std::log(ws.prob);
  return s;
}

SeqReformTerms seq_reform_terms(const Policy& teacher, const Policy& student, const EnumSpace& space) {
  SeqReformTerms t;
  for (const auto& ws : enumerate_probs(teacher, space)) {
    const double ls = seq_logprob(student, space.prompt, ws.seq);
    if (ls == -kInf) throw SupportViolation("student assigns zero probability to a teacher sequence");
    const double lt = std::log(ws.prob);
    t.seq_loss += ws.prob * -ls;
    t.kl += ws.prob * (lt - ls);
    t.teacher_entropy_term += ws.prob * -lt;
  }
  return t;
}

double verify_seq_reform(const Policy& teacher, const Policy& student_a, const Policy& student_b,
                         const EnumSpace& space) {
  const auto a = seq_reform_terms(teacher, student_a, space);
  const auto b = seq_reform_terms(teacher, student_b, space);
  return std::abs((a.seq_loss - a.kl) - (b.seq_loss - b.kl));
}

GseqReformTerms gseq_reform_terms(const Policy& teacher, const Policy& student, BetaWeight beta,
                                  const EnumSpace& space) {
  const double b = beta.value();
  double fwd_loss = 0.0, fwd_kl = 0.0, teacher_self = 0.0;
  for (const auto& ws : enumerate_probs(teacher, space)) {
    const double ls = seq_logprob(student, space.prompt, ws.seq);
    if (ls == -kInf) throw SupportViolation("student assigns zero probability to a teacher sequence");
    const double lt = std::log(ws.prob);
    fwd_loss += ws.prob * -ls;
    fwd_kl += ws.prob * (lt - ls);
    teacher_self += ws.prob * lt;
  }
  double rev_loss = 0.0, rev_kl = 0.0, student_self = 0.0;
  for (const auto& ws : enumerate_probs(student, space)) {
    const double lt = seq_logprob(teacher, space.prompt, ws.seq);
    if (lt == -kInf) throw SupportViolation("teacher assigns zero probability to a student sequence");
    const double ls = std::log(ws.prob);
    rev_loss += ws.prob * -lt;
    rev_kl += ws.prob * (ls - lt);
    student_self += ws.prob * ls;
  }
  GseqReformTerms g;
  g.lhs = b * fwd_loss + (1.0 - b) * rev_loss;
  g.rhs = (b * fwd_kl + (1.0 - b) * rev_kl) - b * teacher_self - (1.0 - b) * student_self;
  return g;
}

double verify_gseq_reform(const Policy& teacher, const Policy& student, BetaWeight beta, const EnumSpace& space) {
  const auto g = gseq_reform_terms(teacher, student, beta, space);
  return std::abs(g.lhs - g.rhs);
}

}  // namespace xkd
