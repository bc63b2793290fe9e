#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "xkd/reward_head.hpp"

using namespace xkd;

namespace {
const Vocab kV{5, 0, 1};

double gauss_pdf(double x, double mu, double var) {
  return std::exp(-0.5 * (x - mu) * (x - mu) / var) / std::sqrt(2 * M_PI * var);
}

// Composite Simpson over [mu - 12 sigma, mu + 12 sigma].
double quad_kl(double mu, double logvar, const RewardPrior& prior) {
  const double var = std::exp(logvar), sd = std::sqrt(var);
  const int n = 20000;
  const double a = mu - 12 * sd, h = 24 * sd / n;
  double s = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = a + i * h;
    const double q = gauss_pdf(x, mu, var);
    const double f = q > 0 ? q * (std::log(q) - std::log(gauss_pdf(x, prior.mean, prior.std * prior.std))) : 0.0;
    s += f * (i == 0 || i == n ? 1 : (i % 2 ? 4 : 2));
  }
  return s * h / 3;
}
}  // namespace

TEST_CASE("features are one-hot blocks") {
  std::vector<TokenId> ctx{3, 4};
  auto f = state_action_features(kV, 2, ctx, 2);
  REQUIRE(f.size() == 15u);
  CHECK(f.values[3] == 1.0);
  CHECK(f.values[5 + 4] == 1.0);
  CHECK(f.values[10 + 2] == 1.0);
  double total = 0.0;
  for (double x : f.values) total += x;
  CHECK(total == 3.0);
}

TEST_CASE("posterior params") {
  RewardPosterior zero(kV, 1);
  std::vector<TokenId> p{2}, pre{0};
  auto feat = zero.features(p, pre, 3);
  auto g = posterior_params(zero, feat);
  CHECK(g.mu == 0.0);
  CHECK(g.logvar == 0.0);

  zero.params()[zero.b_mu_off()] = 2.0;
  CHECK(posterior_params(zero, feat).mu == 2.0);

  Rng rng(1);
  auto head = RewardPosterior::random(kV, 1, 0.5, rng);
  StateActionFeatures two{std::vector<double>(head.feature_dim(), 0.0)};
  two.values[1] = two.values[7] = 1.0;
  const auto w = head.params();
  CHECK(posterior_params(head, two).mu == doctest::Approx(w[1] + w[7] + w[head.b_mu_off()]).epsilon(1e-15));
  CHECK(posterior_params(head, two).logvar ==
        doctest::Approx(w[head.w_logvar_off() + 1] + w[head.w_logvar_off() + 7] + w[head.b_logvar_off()]).epsilon(1e-15));
}

TEST_CASE("Gaussian KL closed form and quadrature") {
  CHECK(kl_to_prior(0, 0) == 0.0);
  CHECK(kl_to_prior(1, 0) == doctest::Approx(0.5).epsilon(1e-15));
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const double mu = 4 * rng.uniform() - 2, lv = 3 * rng.uniform() - 1.5;
    CHECK(std::abs(kl_to_prior(mu, lv) - quad_kl(mu, lv, {})) < 1e-6);
  }
  RewardPrior prior{0.5, 2.0};
  CHECK(std::abs(kl_to_prior(-0.3, 0.4, prior) - quad_kl(-0.3, 0.4, prior)) < 1e-6);
}

TEST_CASE("log density") {
  CHECK(log_density(0.7, 0.3, 0.7) == doctest::Approx(-0.5 * (std::log(2 * M_PI) + 0.3)).epsilon(1e-15));
  CHECK(log_density(0, 0, 1) == doctest::Approx(-1.4189385332046727).epsilon(1e-15));
  const double mu = 0.4, lv = -0.6, sd = std::exp(0.5 * lv);
  const int n = 20000;
  const double a = mu - 12 * sd, h = 24 * sd / n;
  double s = 0.0;
  for (int i = 0; i <= n; ++i) s += std::exp(log_density(mu, lv, a + i * h)) * (i == 0 || i == n ? 1 : (i % 2 ? 4 : 2));
  CHECK(std::abs(s * h / 3 - 1.0) < 1e-6);
}

TEST_CASE("head gradients match finite differences") {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    auto head = RewardPosterior::random(kV, 2, 0.3, rng);
    std::vector<TokenId> prompt{2, 3}, prefix{0, static_cast<TokenId>(2 + rng.index(3))};
    auto feat = head.features(prompt, prefix, static_cast<TokenId>(1 + rng.index(4)));
    const double value = rng.normal();
    RewardPrior prior{0.1 * rng.normal(), 0.5 + rng.uniform()};
    auto g = grad_head(head, feat, value, prior);
    auto kl = [&] { auto q = posterior_params(head, feat); return kl_to_prior(q.mu, q.logvar, prior); };
    auto ld = [&] { auto q = posterior_params(head, feat); return log_density(q.mu, q.logvar, value); };
    CHECK(testing::max_rel_error(g.kl, testing::numeric_grad(head.params(), kl)) < 1e-4);
    CHECK(testing::max_rel_error(g.log_density, testing::numeric_grad(head.params(), ld)) < 1e-4);
    auto q = posterior_params(head, feat);
    const double h = 1e-5;
    const double dv = (log_density(q.mu, q.logvar, value + h) - log_density(q.mu, q.logvar, value - h)) / (2 * h);
    CHECK(g.log_density_dvalue == doctest::Approx(dv).epsilon(1e-6));
  }
}

TEST_CASE("zero features touch only the biases") {
  Rng rng(4);
  auto head = RewardPosterior::random(kV, 1, 0.3, rng);
  StateActionFeatures zero{std::vector<double>(head.feature_dim(), 0.0)};
  auto g = grad_head(head, zero, 0.8);
  for (std::size_t i = 0; i < head.param_count(); ++i) {
    if (i == head.b_mu_off() || i == head.b_logvar_off()) {
      CHECK(g.log_density[i] != 0.0);
    } else {
      CHECK(g.kl[i] == 0.0);
      CHECK(g.log_density[i] == 0.0);
    }
  }
}

TEST_CASE("KL slope vanishes at the prior mean") {
  RewardPosterior head(kV, 1);
  std::vector<TokenId> p{2}, pre{0};
  auto g = grad_head(head, head.features(p, pre, 3), 0.0);
  CHECK(g.kl[head.b_mu_off()] == 0.0);
}

TEST_CASE("invalid prior") {
  CHECK_THROWS(RewardPrior{0.0, 0.0}.validate());
  CHECK_THROWS(RewardPrior{0.0, -1.0}.validate());
}
