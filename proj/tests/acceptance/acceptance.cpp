// Acceptance run: one PASS/FAIL line per criterion; exit status is the
// number of failed criteria (capped at 1).
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "xkd/eval.hpp"
#include "xkd/numeric.hpp"
#include "xkd/objectives.hpp"
#include "xkd/oracle.hpp"
#include "xkd/qvalue.hpp"
#include "xkd/trainer.hpp"

using namespace xkd;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

double max_rel_error(std::span<const double> a, std::span<const double> n) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - n[i]) / std::max({std::abs(a[i]), std::abs(n[i]), 1e-6}));
  return worst;
}

std::vector<double> numeric_grad(std::span<double> params, const std::function<double()>& f, double h = 1e-5) {
  std::vector<double> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = f();
    params[i] = keep - h;
    const double down = f();
    params[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

Prompt random_prompt(const Vocab& v, int len, Rng& rng) {
  Prompt x;
  for (int i = 0; i < len; ++i) x.tokens.push_back(2 + static_cast<TokenId>(rng.index(static_cast<std::size_t>(v.size - 2))));
  return x;
}

Sequence random_sequence(const Vocab& v, int max_len, Rng& rng) {
  Sequence y{{v.bos_id}};
  const int n = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(max_len)));
  for (int i = 0; i < n; ++i) {
    TokenId t;
    do t = static_cast<TokenId>(rng.index(static_cast<std::size_t>(v.size)));
    while (t == v.bos_id || (i + 1 < n && t == v.eos_id));
    y.tokens.push_back(t);
  }
  return y;
}

struct Instance {
  TabularPolicy teacher;
  NeuralPolicy student;
  RewardPosterior head;
  Prompt x;
  Sequence y;
  XKDConfig cfg;
};

Instance random_instance(Rng& rng) {
  const Vocab v{6, 0, 1};
  XKDConfig cfg;
  cfg.lambda = 0.05 + rng.uniform();
  cfg.gamma = 0.5 + 0.5 * rng.uniform();
  cfg.beta = rng.uniform();
  cfg.temps.tau_prime = 0.3 + rng.uniform();
  cfg.prior = {0.2 * rng.normal(), 0.5 + rng.uniform()};
  return {TabularPolicy::random(v, 2, rng), NeuralPolicy::random(v, 2, 8, 0.3, rng),
          RewardPosterior::random(v, 2, 0.3, rng), random_prompt(v, 2, rng), random_sequence(v, 4, rng), cfg};
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---------------------------------------------------------------------------

Outcome decomposition() {
  Rng rng(101);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    auto in = random_instance(rng);
    const double orm = loss_orm(in.student, in.head, in.x, in.y, in.cfg).loss.total;
    const double seq = loss_seq(in.student, in.x, in.y, in.cfg).loss.total;
    const double ex = loss_ex(in.student, in.head, in.x, in.y, in.cfg).loss.total;
    worst = std::max(worst, std::abs(orm - (seq + ex)));
  }
  return {worst < 1e-12, fmt("100 instances, max |orm - (seq + ex)| = %.3g", worst)};
}

using Stream = std::vector<std::vector<double>>;

TrainHooks recorder(Stream& out) {
  TrainHooks h;
  h.on_step = [&out](const StepRecord&, std::span<const double> g, std::span<const double>) {
    out.emplace_back(g.begin(), g.end());
  };
  return h;
}

double stream_diff(const Stream& a, const Stream& b) {
  if (a.size() != b.size()) return kInf;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, max_abs_diff(a[i], b[i]));
  return worst;
}

struct Toy {
  ExperimentConfig cfg;
  TabularPolicy teacher;
  ExperimentData data;
};

Toy toy(int steps) {
  ExperimentConfig cfg;
  cfg.train.steps = steps;
  auto teacher = fit_teacher(cfg);
  auto data = make_experiment_data(cfg, teacher);
  return {cfg, teacher, data};
}

/// Gradient streams of a run with the regularizer at lambda = 0 and of the
/// matching non-experiential run.
template <class Run>
double degeneracy(const Toy& t, Run&& run) {
  Stream a, b;
  TrainConfig cfg = t.cfg.train;
  cfg.xkd.lambda = 0.0;
  for (int pass = 0; pass < 2; ++pass) {
    Rng init(7);
    auto student = NeuralPolicy::random(t.cfg.task.vocab(), t.cfg.student_k, t.cfg.hidden, t.cfg.init_std, init);
    RewardPosterior head = RewardPosterior::random(t.cfg.task.vocab(), t.cfg.student_k, 0.1, init);
    cfg.experiential = pass == 0;
    run(student, head, cfg, recorder(pass == 0 ? a : b));
  }
  return stream_diff(a, b);
}

Outcome degeneracy_suite() {
  const auto t = toy(50);
  const double seq = degeneracy(t, [&](NeuralPolicy& s, RewardPosterior& h, const TrainConfig& c, const TrainHooks& k) {
    train_sequence_xkd(t.teacher, s, h, t.data.prompts, c, k);
  });
  const double gen = degeneracy(t, [&](NeuralPolicy& s, RewardPosterior& h, const TrainConfig& c, const TrainHooks& k) {
    train_generalized_xkd(t.teacher, s, h, t.data.prompts, t.data.sft, c, k);
  });
  const double sup = degeneracy(t, [&](NeuralPolicy& s, RewardPosterior& h, const TrainConfig& c, const TrainHooks& k) {
    train_supervised_xkd(t.teacher, s, h, t.data.sft, c, k);
  });
  const bool ok = seq < 1e-12 && gen < 1e-12 && sup < 1e-12;
  return {ok, fmt("50-step streams, max diff: orm/seq %.3g, gxkd/gkd %.3g, supxkd/supkd %.3g", seq, gen, sup)};
}

Outcome reformulations() {
  Rng rng(303);
  const Vocab v{4, 0, 1};
  EnumSpace sp{v, 3, Prompt{{2}}};
  double seq = 0.0, gseq[3] = {0, 0, 0};
  const double betas[3] = {0.0, 0.5, 1.0};
  for (int i = 0; i < 10; ++i) {
    auto teacher = TabularPolicy::random(v, 2, rng);
    auto a = NeuralPolicy::random(v, 2, 8, 1.0, rng);
    auto b = NeuralPolicy::random(v, 2, 8, 1.0, rng);
    seq = std::max(seq, verify_seq_reform(teacher, a, b, sp));
    for (int k = 0; k < 3; ++k) gseq[k] = std::max(gseq[k], verify_gseq_reform(teacher, a, BetaWeight(betas[k]), sp));
  }
  const bool ok = seq < 1e-9 && gseq[0] < 1e-9 && gseq[1] < 1e-9 && gseq[2] < 1e-9;
  return {ok, fmt("10 triples, seq %.3g, gseq beta=0 %.3g, 0.5 %.3g, 1 %.3g", seq, gseq[0], gseq[1], gseq[2])};
}

Outcome bellman() {
  const auto t0 = Clock::now();
  Rng rng(404);
  auto mdp = TabularMdp::chain(4, 0.2, rng);
  std::vector<std::vector<double>> pi(4);
  for (auto& row : pi) {
    const double l = 0.1 + 0.8 * rng.uniform();
    row = {l, 1 - l};
  }
  double worst = 0.0;
  for (double gamma : {0.9, 1.0}) {
    auto q = evaluate_q(mdp, pi, gamma);
    auto td = expected_td(mdp, pi, q, gamma);
    for (int s = 0; s < mdp.n_states; ++s)
      for (int a = 0; a < mdp.n_actions; ++a) worst = std::max(worst, std::abs(td[s][a] - mdp.reward[s][a]));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-9 && secs < 1.0, fmt("gamma 0.9 and 1.0, max |E[delta] - R| = %.3g in %.3fs", worst, secs)};
}

Outcome gradients() {
  using Fn = std::function<LossResult(const Instance&)>;
  const std::vector<std::pair<const char*, Fn>> losses{
      {"seq", [](const Instance& i) { return loss_seq(i.student, i.x, i.y, i.cfg); }},
      {"ex", [](const Instance& i) { return loss_ex(i.student, i.head, i.x, i.y, i.cfg); }},
      {"orm", [](const Instance& i) { return loss_orm(i.student, i.head, i.x, i.y, i.cfg); }},
      {"supxkd", [](const Instance& i) { return loss_supervised_xkd(i.teacher, i.student, i.head, i.x, i.y, i.cfg); }},
      {"gxkd", [](const Instance& i) { return loss_generalized_xkd(i.teacher, i.student, i.head, i.x, i.y, i.cfg); }},
  };
  std::string detail;
  bool ok = true;
  Rng rng(505);
  for (const auto& [name, fn] : losses) {
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) {
      auto in = random_instance(rng);
      auto r = fn(in);
      worst = std::max(worst, max_rel_error(r.grad_theta, numeric_grad(in.student.params(), [&] { return fn(in).loss.total; })));
      if (!r.grad_phi.empty())
        worst = std::max(worst, max_rel_error(r.grad_phi, numeric_grad(in.head.params(), [&] { return fn(in).loss.total; })));
    }
    ok &= worst < 1e-4;
    detail += fmt("%s %.2g, ", name, worst);
  }
  double head = 0.0;
  for (int k = 0; k < 20; ++k) {
    auto in = random_instance(rng);
    auto feat = in.head.features(in.x.tokens, std::span(in.y.tokens).first(1), in.y.tokens[1]);
    const double value = rng.normal();
    auto g = grad_head(in.head, feat, value, in.cfg.prior);
    auto kl = [&] { auto q = posterior_params(in.head, feat); return kl_to_prior(q.mu, q.logvar, in.cfg.prior); };
    auto ld = [&] { auto q = posterior_params(in.head, feat); return log_density(q.mu, q.logvar, value); };
    head = std::max(head, max_rel_error(g.kl, numeric_grad(in.head.params(), kl)));
    head = std::max(head, max_rel_error(g.log_density, numeric_grad(in.head.params(), ld)));
  }
  ok &= head < 1e-4;
  detail += fmt("head %.2g (max rel. error, 20 instances each)", head);
  return {ok, detail};
}

double simpson(const std::function<double(double)>& f, double a, double b, int n = 20000) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4 : 2);
  return s * h / 3;
}

Outcome gaussians() {
  Rng rng(606);
  double kl_err = 0.0, mass_err = 0.0;
  for (int i = 0; i < 50; ++i) {
    const double mu = 4 * rng.uniform() - 2, lv = 3 * rng.uniform() - 1.5, sd = std::exp(0.5 * lv);
    auto integrand = [&](double x) {
      const double lq = log_density(mu, lv, x);
      return std::exp(lq) * (lq - log_density(0.0, 0.0, x));
    };
    kl_err = std::max(kl_err, std::abs(kl_to_prior(mu, lv) - simpson(integrand, mu - 12 * sd, mu + 12 * sd)));
    const double mass = simpson([&](double x) { return std::exp(log_density(mu, lv, x)); }, mu - 12 * sd, mu + 12 * sd);
    mass_err = std::max(mass_err, std::abs(mass - 1.0));
  }
  return {kl_err < 1e-6 && mass_err < 1e-6,
          fmt("50 pairs, max |KL - quadrature| = %.3g, max |mass - 1| = %.3g", kl_err, mass_err)};
}

/// Random first-order policy over the actions {EOS, c1, c2}; BOS is never emitted.
TabularPolicy three_action_policy(const Vocab& v, Rng& rng) {
  TabularPolicy p(v, 1);
  for (TokenId c = 0; c < v.size; ++c) p.set_row({c}, {{1, 0.1 + rng.uniform()}, {2, 0.1 + rng.uniform()}, {3, 0.1 + rng.uniform()}});
  return p;
}

Outcome estimators() {
  const Vocab v{4, 0, 1};
  EnumSpace sp{v, 2, Prompt{{2}}};
  Rng rng(707);
  double worst_z = 0.0;
  for (int i = 0; i < 10; ++i) {
    auto t = three_action_policy(v, rng);
    auto s = three_action_policy(v, rng);
    const BetaWeight beta(0.1 + 0.8 * rng.uniform());
    const std::vector<SequenceFn> fns{
        [&](const Sequence& y) { return -seq_logprob(s, sp.prompt, y); },
        [&](const Sequence& y) { return pointwise_kl(t, s, sp.prompt, y); },
        [&](const Sequence& y) { return pointwise_beta_div(t, s, sp.prompt, y, beta, DivergenceMode::skew); },
    };
    for (std::size_t k = 0; k < fns.size(); ++k) {
      auto m = mc_vs_exact(t, sp, fns[k], 200000, 1000 + 10 * i + k);
      worst_z = std::max(worst_z, std::abs(m.mc_mean - m.exact) / m.stderr_mean.value());
    }
  }
  return {worst_z < 4.0, fmt("10 pairs x 3 estimators, n=200k, worst |MC - exact| = %.2f stderr", worst_z)};
}

Outcome end_to_end(std::vector<NeuralPolicy>& students) {
  const auto t0 = Clock::now();
  std::string detail;
  bool ok = true;
  double worst_drop = 1.0;
  int xkd_better = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ExperimentConfig cfg;
    cfg.train.seed = cfg.train.gen.seed = seed;
    auto xkd = run_experiment(cfg);
    cfg.train.xkd.lambda = 0.0;
    cfg.train.experiential = false;
    auto gkd = run_experiment(cfg);
    const double drop = 1.0 - xkd.kl_after / xkd.kl_before;
    worst_drop = std::min(worst_drop, drop);
    ok &= drop >= 0.5;
    xkd_better += xkd.kl_after < gkd.kl_after;
    std::printf("    seed %llu: KL %.4g -> GXKD %.4g, GKD %.4g\n", static_cast<unsigned long long>(seed), xkd.kl_before,
                xkd.kl_after, gkd.kl_after);
    students.push_back(xkd.student);
  }
  const double secs = seconds_since(t0);
  ok &= secs < 300.0;
  detail = fmt("smallest KL reduction %.1f%% over 5 seeds; GXKD below GKD on %d/5 seeds; %.1fs", 100 * worst_drop,
               xkd_better, secs);
  return {ok, detail};
}

Outcome blackbox() {
  ExperimentConfig cfg;
  cfg.method = Method::blackbox;
  cfg.teacher_responses = 10;
  auto teacher = fit_teacher(cfg);
  auto data = make_experiment_data(cfg, teacher);
  bool tens = true;
  for (const auto& r : data.teacher_behavior.records) tens &= r.responses.size() == 10;

  auto run = run_experiment(cfg, teacher, data);
  const auto d = windowed_descent(run.report);

  Toy t{cfg, teacher, data};
  t.cfg.train.steps = 50;
  const double diff = degeneracy(t, [&](NeuralPolicy& s, RewardPosterior& h, const TrainConfig& c, const TrainHooks& k) {
    train_blackbox_xkd(data.teacher_behavior, s, h, c, k);
  });
  const bool ok = tens && d.descended() && diff < 1e-12;
  return {ok, fmt("%zu prompts x 10 responses; windowed loss %.4g -> %.4g; lambda=0 vs BBSeqKD stream diff %.3g",
                  data.teacher_behavior.size(), d.initial, d.final, diff)};
}

Outcome sweeps(const std::vector<NeuralPolicy>& students) {
  ExperimentConfig cfg;
  auto eval = gen_task_data(cfg.task, cfg.n_eval, 1).sft;
  std::vector<double> temps, div;
  for (std::size_t seed = 0; seed < students.size(); ++seed) {
    for (const auto& r : sweep_temperature(students[seed], cfg.task, eval, kTemperatureTicks, 500, cfg.train.gen, seed)) {
      if (r.metric != "diversity") continue;
      temps.push_back(*r.temperature);
      div.push_back(r.value);
    }
  }
  const double rho = spearman(temps, div);

  SweepOptions opt;
  opt.metric = SweepMetric::kl;
  opt.workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  auto lam = sweep_lambda(cfg, kLambdaTicks, opt);
  auto tau = sweep_tau_prime(cfg, kTauPrimeTicks, opt);
  bool ticks = lam.size() == kLambdaTicks.size() && tau.size() == kTauPrimeTicks.size();
  for (std::size_t i = 0; ticks && i < lam.size(); ++i) ticks &= *lam[i].lambda == kLambdaTicks[i];
  for (std::size_t i = 0; ticks && i < tau.size(); ++i) ticks &= *tau[i].tau_prime == kTauPrimeTicks[i];

  auto base = cfg;
  base.train.experiential = false;
  const double baseline = run_experiment(base).kl_after;
  const bool same = !lam.empty() && lam[0].value == baseline;
  return {rho > 0 && ticks && same,
          fmt("diversity vs temperature rho = %.3f (5 seeds x 4 temps, 500 samples); ticks %s; lambda=0 %.17g vs "
              "baseline %.17g",
              rho, ticks ? "exact" : "WRONG", lam.empty() ? kInf : lam[0].value, baseline)};
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](int n, const char* name, const Outcome& o) {
    std::printf("%s [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", n, name, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  };
  auto guarded = [](auto&& fn) -> Outcome {
    try {
      return fn();
    } catch (const std::exception& e) {
      return {false, std::string("error: ") + e.what()};
    }
  };
  std::vector<NeuralPolicy> students;
  report(1, "decomposition identity", guarded(decomposition));
  report(2, "lambda=0 degeneracy", guarded(degeneracy_suite));
  report(3, "sequence-loss reformulations", guarded(reformulations));
  report(4, "Bellman relation", guarded(bellman));
  report(5, "gradient fidelity", guarded(gradients));
  report(6, "Gaussian machinery", guarded(gaussians));
  report(7, "estimator consistency", guarded(estimators));
  report(8, "end-to-end distillation", guarded([&] { return end_to_end(students); }));
  report(9, "black-box pipeline", guarded(blackbox));
  report(10, "sweep harness", guarded([&] { return sweeps(students); }));
  std::printf("%d/10 criteria passed\n", 10 - failed);
  return failed == 0 ? 0 : 1;
}
