#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "xkd/divergence.hpp"
#include "xkd/numeric.hpp"

using namespace xkd;

namespace {
double hand_kl(std::vector<double> p, std::vector<double> q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0) s += p[i] * std::log(p[i] / q[i]);
  return s;
}
}  // namespace

TEST_CASE("token KL") {
  TokenDist p{{0.3, 0.7}};
  CHECK(kl_tokens(p, p) == 0.0);
  CHECK(kl_tokens(TokenDist{{1, 0}}, TokenDist{{0.5, 0.5}}) == doctest::Approx(0.6931471805599453).epsilon(1e-15));
  CHECK(std::isinf(kl_tokens(TokenDist{{0.5, 0.5}}, TokenDist{{1, 0}})));
}

TEST_CASE("beta skew divergence") {
  TokenDist p{{0.8, 0.2}}, q{{0.2, 0.8}};
  CHECK(beta_skew_div(p, q, BetaWeight(1.0)) == kl_tokens(p, q));
  CHECK(beta_skew_div(p, q, BetaWeight(0.0)) == kl_tokens(q, p));
  CHECK(beta_skew_div(p, q, BetaWeight(0.5)) == doctest::Approx(0.8317766166719343).epsilon(1e-14));
  CHECK_THROWS(BetaWeight(1.5));
  CHECK_THROWS(BetaWeight(-0.1));
}

TEST_CASE("mixture JSD") {
  TokenDist p{{0.1, 0.6, 0.3}}, q{{0.5, 0.25, 0.25}};
  CHECK(mixture_jsd(p, p, BetaWeight(0.3)) == doctest::Approx(0.0));
  CHECK(mixture_jsd(TokenDist{{1, 0}}, TokenDist{{0, 1}}, BetaWeight(0.5)) ==
        doctest::Approx(0.6931471805599453).epsilon(1e-15));
  CHECK(mixture_jsd(p, q, BetaWeight(0.0)) == doctest::Approx(0.0));
  const double j = mixture_jsd(p, q, BetaWeight(0.4));
  CHECK(j >= 0.0);
  CHECK(j <= -(0.4 * std::log(0.4) + 0.6 * std::log(0.6)) + 1e-12);
}

TEST_CASE("divergence gradient w.r.t. q matches finite differences") {
  TokenDist p{{0.1, 0.6, 0.3}};
  std::vector<double> q{0.5, 0.25, 0.25};
  for (auto mode : {DivergenceMode::skew, DivergenceMode::mixture}) {
    for (double b : {0.0, 0.3, 1.0}) {
      auto g = token_divergence_grad_q(p, TokenDist{q}, BetaWeight(b), mode);
      auto n = testing::numeric_grad(q, [&] { return token_divergence(p, TokenDist{q}, BetaWeight(b), mode); });
      CHECK(testing::max_rel_error(g, n) < 1e-6);
    }
  }
}

TEST_CASE("pointwise divergences on realized prefixes") {
  const Vocab v{4, 0, 1};
  TabularPolicy p(v, 1), q(v, 1);
  p.set_row({0}, {{2, 1.0}, {3, 1.0}, {1, 2.0}});
  q.set_row({0}, {{2, 3.0}, {3, 1.0}, {1, 1.0}});
  p.set_row({2}, {{2, 1.0}, {1, 1.0}});
  q.set_row({2}, {{2, 1.0}, {3, 1.0}, {1, 2.0}});
  p.set_row({3}, {{3, 1.0}, {1, 4.0}});
  q.set_row({3}, {{3, 1.0}, {1, 1.0}});
  Prompt x{{3}};

  CHECK(pointwise_kl(p, p, x, Sequence{{0, 2, 3, 1}}) == 0.0);
  CHECK(pointwise_kl(p, q, x, Sequence{{0}}) == 0.0);
  std::vector<TokenId> bos{0};
  CHECK(pointwise_kl(p, q, x, Sequence{{0, 2}}) == doctest::Approx(kl_tokens(p.dist_for_context(bos), q.dist_for_context(bos))));

  // BOS -> 2 -> 3 -> EOS visits contexts {0}, {2}, {3}
  const double k0 = hand_kl({0, 0.5, 0.25, 0.25}, {0, 0.2, 0.6, 0.2});
  const double k2 = hand_kl({0, 0.5, 0.5, 0}, {0, 0.5, 0.25, 0.25});
  const double k3 = hand_kl({0, 0.8, 0, 0.2}, {0, 0.5, 0, 0.5});
  Sequence y{{0, 2, 3, 1}};
  CHECK(pointwise_kl(p, q, x, y) == doctest::Approx((k0 + k2 + k3) / 3).epsilon(1e-14));

  CHECK(pointwise_beta_div(p, q, x, y, BetaWeight(1.0), DivergenceMode::skew) ==
        doctest::Approx(pointwise_kl(p, q, x, y)).epsilon(1e-14));
  CHECK(pointwise_beta_div(p, p, x, y, BetaWeight(0.5), DivergenceMode::mixture) == doctest::Approx(0.0));

  // two steps, beta = 0.5 skew
  Sequence y2{{0, 3, 1}};
  const double r0 = hand_kl({0, 0.2, 0.6, 0.2}, {0, 0.5, 0.25, 0.25});
  const double r3 = hand_kl({0, 0.5, 0, 0.5}, {0, 0.8, 0, 0.2});
  CHECK(pointwise_beta_div(p, q, x, y2, BetaWeight(0.5), DivergenceMode::skew) ==
        doctest::Approx((0.5 * (k0 + r0) + 0.5 * (k3 + r3)) / 2).epsilon(1e-14));
}

TEST_CASE("divergences are non-negative") {
  Rng rng(4);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> a(5), b(5);
    for (auto& x : a) x = rng.uniform() + 1e-3;
    for (auto& x : b) x = rng.uniform() + 1e-3;
    auto p = TokenDist{softmax(a)}, q = TokenDist{softmax(b)};
    const double beta = rng.uniform();
    CHECK(beta_skew_div(p, q, BetaWeight(beta)) >= 0.0);
    CHECK(mixture_jsd(p, q, BetaWeight(beta)) >= -1e-15);
  }
}
