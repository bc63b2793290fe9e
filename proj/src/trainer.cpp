#include "xkd/trainer.hpp"

#include <chrono>
#include <cmath>
#include <exception>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "xkd/numeric.hpp"

namespace xkd {

const char* to_string(Method m) {
  switch (m) {
    case Method::sequence: return "sequence";
    case Method::supervised: return "supervised";
    case Method::generalized: return "generalized";
    case Method::blackbox: return "blackbox";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "sequence") return Method::sequence;
  if (s == "supervised") return Method::supervised;
  if (s == "generalized") return Method::generalized;
  if (s == "blackbox") return Method::blackbox;
  throw std::invalid_argument("unknown method: " + s);
}

const char* to_string(LrSchedule s) { return s == LrSchedule::constant ? "constant" : "linear"; }

LrSchedule lr_schedule_from_string(const std::string& s) {
  if (s == "constant") return LrSchedule::constant;
  if (s == "linear") return LrSchedule::linear;
  throw std::invalid_argument("unknown lr schedule: " + s);
}

const char* to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer: " + s);
}

const char* to_string(Branch b) {
  switch (b) {
    case Branch::offline: return "offline";
    case Branch::on_policy: return "on-policy";
    case Branch::teacher_sample: return "teacher";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("train.steps must be non-negative");
  if (batch_size <= 0) throw std::invalid_argument("train.batch_size must be positive");
  if (!(lr >= 0.0)) throw std::invalid_argument("train.lr must be non-negative");
  if (warmup_steps < 0) throw std::invalid_argument("train.warmup_steps must be non-negative");
  if (!(max_grad_norm >= 0.0)) throw std::invalid_argument("train.max_grad_norm must be non-negative");
  if (workers <= 0) throw std::invalid_argument("train.workers must be positive");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
    throw std::invalid_argument("adam betas must lie in [0, 1)");
  if (!(optimizer.eps > 0.0)) throw std::invalid_argument("adam eps must be positive");
  xkd.validate();
  gen.validate();
}

double scheduled_lr(const TrainConfig& cfg, int step) {
  if (step < cfg.warmup_steps) return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  if (cfg.lr_schedule == LrSchedule::constant) return cfg.lr;
  const int decay_span = cfg.steps - cfg.warmup_steps;
  if (decay_span <= 0) return 0.0;
  return cfg.lr * std::max(0.0, static_cast<double>(cfg.steps - step) / static_cast<double>(decay_span));
}

void optimizer_step(std::span<double> params, std::span<const double> grad, OptimizerState& state,
                    const OptimizerConfig& cfg, double lr) {
  if (params.size() != grad.size()) throw std::invalid_argument("parameter/gradient size mismatch");
  if (cfg.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
    return;
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.t = 0;
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

DescentCheck windowed_descent(const TrainReport& report, double fraction) {
  const auto n = report.log.size();
  if (n == 0) throw std::invalid_argument("empty training log");
  const auto w = std::max<std::size_t>(1, static_cast<std::size_t>(fraction * static_cast<double>(n)));
  DescentCheck d;
  for (std::size_t i = 0; i < w; ++i) {
    d.initial += report.log[i].loss.total;
    d.final += report.log[n - w + i].loss.total;
  }
  d.initial /= static_cast<double>(w);
  d.final /= static_cast<double>(w);
  return d;
}

std::pair<std::size_t, std::size_t> pick_teacher_response(const Dataset& teacher_data, Rng& rng) {
  if (teacher_data.empty()) throw std::invalid_argument("teacher-behavior dataset is empty");
  const std::size_t i = rng.index(teacher_data.size());
  const auto& responses = teacher_data.records[i].responses;
  if (responses.empty()) throw std::invalid_argument("teacher-behavior record without responses");
  return {i, rng.index(responses.size())};
}

namespace {

struct Sample {
  Prompt x;
  Sequence y;
};

struct Draw {
  Branch branch = Branch::offline;
  std::vector<Sample> samples;
};

std::string describe(const Sample& s) {
  std::ostringstream out;
  out << "prompt [";
  for (std::size_t i = 0; i < s.x.tokens.size(); ++i) out << (i ? " " : "") << s.x.tokens[i];
  out << "] response [";
  for (std::size_t i = 0; i < s.y.tokens.size(); ++i) out << (i ? " " : "") << s.y.tokens[i];
  out << "]";
  return out.str();
}

using EvalFn = std::function<LossResult(const Sample&)>;

/// Evaluate every sample (optionally across worker threads), then reduce in
/// index order so the result does not depend on the worker count.
LossResult evaluate_batch(const std::vector<Sample>& batch, const EvalFn& eval, int workers) {
  std::vector<LossResult> results(batch.size());
  std::vector<std::exception_ptr> errors(batch.size());
  auto run = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < batch.size(); i += stride) {
      try {
        results[i] = eval(batch[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto n_workers = static_cast<std::size_t>(std::min<int>(workers, static_cast<int>(batch.size())));
  if (n_workers <= 1) {
    run(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(run, w, n_workers);
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const SupportViolation& e) {
      throw NumericError(std::string("support violation on ") + describe(batch[i]) + ": " + e.what());
    }
  }

  LossResult mean = results.front();
  for (std::size_t i = 1; i < results.size(); ++i) {
    const auto& r = results[i];
    mean.loss.kd_term += r.loss.kd_term;
    mean.loss.prior_kl_term += r.loss.prior_kl_term;
    mean.loss.td_logdensity_term += r.loss.td_logdensity_term;
    mean.loss.total += r.loss.total;
    mean.loss.n_steps += r.loss.n_steps;
    for (std::size_t j = 0; j < r.grad_theta.size(); ++j) mean.grad_theta[j] += r.grad_theta[j];
    for (std::size_t j = 0; j < r.grad_phi.size(); ++j) mean.grad_phi[j] += r.grad_phi[j];
  }
  const double inv = 1.0 / static_cast<double>(results.size());
  mean.loss.kd_term *= inv;
  mean.loss.prior_kl_term *= inv;
  mean.loss.td_logdensity_term *= inv;
  mean.loss.total *= inv;
  for (double& g : mean.grad_theta) g *= inv;
  for (double& g : mean.grad_phi) g *= inv;
  return mean;
}

void clip(std::vector<double>& g, double max_norm) {
  if (max_norm <= 0.0) return;
  const double norm = l2_norm(g);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (double& v : g) v *= s;
  }
}

void require_finite(const LossResult& r, int step) {
  auto bad = [](double v) { return !std::isfinite(v); };
  if (bad(r.loss.total) || std::any_of(r.grad_theta.begin(), r.grad_theta.end(), bad) ||
      std::any_of(r.grad_phi.begin(), r.grad_phi.end(), bad))
    throw NumericError("non-finite loss or gradient at step " + std::to_string(step));
}

using DrawFn = std::function<Draw(int step, RngStreams& rng, TrainReport& report)>;

TrainReport run_loop(NeuralPolicy& student, RewardPosterior* head, const TrainConfig& cfg, const TrainHooks& hooks,
                     const DrawFn& draw, const EvalFn& eval) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  report.seed = cfg.seed;
  report.log.reserve(static_cast<std::size_t>(cfg.steps));
  RngStreams rng(cfg.seed);
  OptimizerState theta_state, phi_state;

  for (int step = 0; step < cfg.steps; ++step) {
    Draw d = draw(step, rng, report);
    LossResult r = evaluate_batch(d.samples, eval, cfg.workers);
    require_finite(r, step);

    StepRecord rec{step, d.branch, r.loss, scheduled_lr(cfg, step)};
    if (hooks.on_step) hooks.on_step(rec, r.grad_theta, r.grad_phi);

    clip(r.grad_theta, cfg.max_grad_norm);
    clip(r.grad_phi, cfg.max_grad_norm);
    optimizer_step(student.params(), r.grad_theta, theta_state, cfg.optimizer, rec.lr);
    if (head && !r.grad_phi.empty()) optimizer_step(head->params(), r.grad_phi, phi_state, cfg.optimizer, rec.lr);
    report.log.push_back(rec);

    if (hooks.checkpoint && hooks.checkpoint_every > 0 && (step + 1) % hooks.checkpoint_every == 0 &&
        step + 1 < cfg.steps)
      hooks.checkpoint(step + 1, student, head);
  }
  if (hooks.checkpoint) report.checkpoint = hooks.checkpoint(cfg.steps, student, head);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

Sample offline_pair(const Dataset& data, Rng& rng) {
  const auto& rec = data.records[rng.index(data.size())];
  return {rec.prompt, rec.responses.front()};
}

void require_nonempty(const Dataset& d, const char* what) {
  if (d.empty()) throw std::invalid_argument(std::string(what) + " dataset is empty");
}

void require_pairs(const Dataset& d, const char* what) {
  require_nonempty(d, what);
  for (const auto& r : d.records)
    if (r.responses.empty()) throw std::invalid_argument(std::string(what) + " dataset needs responses");
}

}  // namespace

TrainReport sft(NeuralPolicy& policy, const Dataset& data, const TrainConfig& cfg, const TrainHooks& hooks) {
  require_pairs(data, "SFT");
  auto draw = [&](int, RngStreams& rng, TrainReport& rep) {
    Draw d;
    for (int b = 0; b < cfg.batch_size; ++b) d.samples.push_back(offline_pair(data, rng.data));
    rep.offline_draws += d.samples.size();
    return d;
  };
  auto eval = [&](const Sample& s) { return loss_sft(policy, s.x, s.y); };
  return run_loop(policy, nullptr, cfg, hooks, draw, eval);
}

TrainReport train_sequence_xkd(const Policy& teacher, NeuralPolicy& student, RewardPosterior& head,
                               const Dataset& prompts, const TrainConfig& cfg, const TrainHooks& hooks) {
  require_nonempty(prompts, "prompt");
  auto draw = [&](int, RngStreams& rng, TrainReport& rep) {
    Draw d{Branch::teacher_sample, {}};
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& x = prompts.records[rng.data.index(prompts.size())].prompt;
      d.samples.push_back({x, sample(teacher, x, cfg.gen, rng.sampling)});
    }
    rep.teacher_draws += d.samples.size();
    return d;
  };
  auto eval = [&](const Sample& s) {
    return cfg.experiential ? loss_orm(student, head, s.x, s.y, cfg.xkd) : loss_seq(student, s.x, s.y, cfg.xkd);
  };
  return run_loop(student, cfg.experiential ? &head : nullptr, cfg, hooks, draw, eval);
}

TrainReport train_supervised_xkd(const Policy& teacher, NeuralPolicy& student, RewardPosterior& head,
                                 const Dataset& sft_data, const TrainConfig& cfg, const TrainHooks& hooks) {
  require_pairs(sft_data, "SFT");
  auto draw = [&](int, RngStreams& rng, TrainReport& rep) {
    Draw d;
    for (int b = 0; b < cfg.batch_size; ++b) d.samples.push_back(offline_pair(sft_data, rng.data));
    rep.offline_draws += d.samples.size();
    return d;
  };
  auto eval = [&](const Sample& s) {
    return cfg.experiential ? loss_supervised_xkd(teacher, student, head, s.x, s.y, cfg.xkd)
                            : loss_supervised_kd(teacher, student, s.x, s.y, cfg.xkd);
  };
  return run_loop(student, cfg.experiential ? &head : nullptr, cfg, hooks, draw, eval);
}

TrainReport train_generalized_xkd(const Policy& teacher, NeuralPolicy& student, RewardPosterior& head,
                                  const Dataset& prompts, const Dataset& sft_data, const TrainConfig& cfg,
                                  const TrainHooks& hooks) {
  require_nonempty(prompts, "prompt");
  require_pairs(sft_data, "SFT");
  auto draw = [&](int, RngStreams& rng, TrainReport& rep) {
    Draw d;
    const double u = rng.branch.uniform();
    if (u <= cfg.xkd.alpha) {
      d.branch = Branch::on_policy;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const auto& x = prompts.records[rng.data.index(prompts.size())].prompt;
        d.samples.push_back({x, sample(student, x, cfg.gen, rng.sampling)});
      }
      rep.on_policy_draws += d.samples.size();
    } else {
      d.branch = Branch::offline;
      for (int b = 0; b < cfg.batch_size; ++b) d.samples.push_back(offline_pair(sft_data, rng.data));
      rep.offline_draws += d.samples.size();
    }
    return d;
  };
  auto eval = [&](const Sample& s) {
    return cfg.experiential ? loss_generalized_xkd(teacher, student, head, s.x, s.y, cfg.xkd)
                            : loss_gkd(teacher, student, s.x, s.y, cfg.xkd);
  };
  return run_loop(student, cfg.experiential ? &head : nullptr, cfg, hooks, draw, eval);
}

TrainReport train_blackbox_xkd(const Dataset& teacher_data, NeuralPolicy& student, RewardPosterior& head,
                               const TrainConfig& cfg, const TrainHooks& hooks) {
  require_pairs(teacher_data, "teacher-behavior");
  auto draw = [&](int, RngStreams& rng, TrainReport& rep) {
    // The black-box listing draws u without using it; drawn here so the
    // branch stream advances exactly as in the white-box loop.
    (void)rng.branch.uniform();
    Draw d{Branch::teacher_sample, {}};
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto [i, j] = pick_teacher_response(teacher_data, rng.data);
      d.samples.push_back({teacher_data.records[i].prompt, teacher_data.records[i].responses[j]});
    }
    rep.teacher_draws += d.samples.size();
    return d;
  };
  auto eval = [&](const Sample& s) {
    return cfg.experiential ? loss_orm(student, head, s.x, s.y, cfg.xkd) : loss_seq(student, s.x, s.y, cfg.xkd);
  };
  return run_loop(student, cfg.experiential ? &head : nullptr, cfg, hooks, draw, eval);
}

}  // namespace xkd
