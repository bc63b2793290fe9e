#include "xkd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "xkd/oracle.hpp"

namespace xkd {

using nlohmann::json;

const char* to_string(TaskKind k) {
  switch (k) {
    case TaskKind::copy: return "copy";
    case TaskKind::reverse: return "reverse";
    case TaskKind::modsum: return "modsum";
  }
  return "?";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "copy") return TaskKind::copy;
  if (s == "reverse") return TaskKind::reverse;
  if (s == "modsum") return TaskKind::modsum;
  throw std::invalid_argument("unknown task kind: " + s);
}

void ToyTask::validate() const {
  if (content_size < 1) throw std::invalid_argument("task.content_size must be positive");
  if (prompt_len < 1) throw std::invalid_argument("task.prompt_len must be positive");
}

Sequence gold_response(const ToyTask& task, const Prompt& x) {
  const Vocab v = task.vocab();
  Sequence y{{v.bos_id}};
  switch (task.kind) {
    case TaskKind::copy:
      y.tokens.insert(y.tokens.end(), x.tokens.begin(), x.tokens.end());
      break;
    case TaskKind::reverse:
      y.tokens.insert(y.tokens.end(), x.tokens.rbegin(), x.tokens.rend());
      break;
    case TaskKind::modsum: {
      int s = 0;
      for (TokenId t : x.tokens) s += ToyTask::value(t);
      y.tokens.push_back(ToyTask::token(s % task.content_size));
      break;
    }
  }
  y.tokens.push_back(v.eos_id);
  return y;
}

TaskData gen_task_data(const ToyTask& task, std::size_t n, std::uint64_t stream) {
  task.validate();
  if (n == 0) throw std::invalid_argument("task data size must be positive");
  Rng rng(task.seed, 100 + stream);
  TaskData d;
  d.prompts.kind = DatasetKind::prompt_only;
  d.sft.kind = DatasetKind::prompt_response;
  for (std::size_t i = 0; i < n; ++i) {
    Prompt x;
    for (int j = 0; j < task.prompt_len; ++j)
      x.tokens.push_back(ToyTask::token(static_cast<int>(rng.index(static_cast<std::size_t>(task.content_size)))));
    d.prompts.records.push_back({x, {}});
    d.sft.records.push_back({x, {gold_response(task, x)}});
  }
  return d;
}

Dataset gen_teacher_behavior(const Policy& teacher, const Dataset& prompts, int n_responses, const GenConfig& gen,
                             std::uint64_t seed) {
  if (n_responses <= 0) throw std::invalid_argument("responses per prompt must be positive");
  Rng rng(seed, 200);
  Dataset d;
  d.kind = DatasetKind::teacher_behavior;
  for (const auto& rec : prompts.records) {
    Record r{rec.prompt, {}};
    for (int i = 0; i < n_responses; ++i) r.responses.push_back(sample(teacher, rec.prompt, gen, rng));
    d.records.push_back(std::move(r));
  }
  return d;
}

Sequence greedy_decode(const Policy& policy, const Prompt& x, int max_len) {
  const Vocab& v = policy.vocab();
  Sequence y{{v.bos_id}};
  for (int t = 0; t < max_len; ++t) {
    const auto d = next_dist(policy, x, y.tokens);
    const auto best = std::max_element(d.probs.begin(), d.probs.end()) - d.probs.begin();
    y.tokens.push_back(static_cast<TokenId>(best));
    if (y.tokens.back() == v.eos_id) break;
  }
  return y;
}

namespace {

void require_eval_set(const Dataset& eval_set) {
  if (eval_set.empty()) throw std::invalid_argument("evaluation set is empty");
  for (const auto& r : eval_set.records)
    if (r.responses.empty()) throw std::invalid_argument("evaluation set needs gold responses");
}

double position_accuracy(const Sequence& gold, const Sequence& y) {
  std::size_t hit = 0;
  for (std::size_t i = 1; i < gold.tokens.size(); ++i)
    if (i < y.tokens.size() && y.tokens[i] == gold.tokens[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(gold.steps());
}

}  // namespace

double token_accuracy(const Policy& policy, const Dataset& eval_set, const GenConfig& gen) {
  require_eval_set(eval_set);
  Rng rng(gen.seed, 300);
  double acc = 0.0;
  for (const auto& r : eval_set.records) acc += position_accuracy(r.responses.front(), sample(policy, r.prompt, gen, rng));
  return acc / static_cast<double>(eval_set.size());
}

double exact_match(const Policy& policy, const Dataset& eval_set, int max_len) {
  require_eval_set(eval_set);
  std::size_t hit = 0;
  for (const auto& r : eval_set.records)
    if (greedy_decode(policy, r.prompt, max_len) == r.responses.front()) ++hit;
  return static_cast<double>(hit) / static_cast<double>(eval_set.size());
}

double self_bleu(const std::vector<Sequence>& samples, int max_n, TokenId eos_id) {
  if (samples.size() < 2) throw std::invalid_argument("self-BLEU needs at least two samples");
  if (max_n < 1) throw std::invalid_argument("self-BLEU order must be positive");
  const std::size_t n = samples.size();

  // Content tokens of each sample.
  std::vector<std::vector<TokenId>> toks(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = samples[i].tokens;
    std::size_t end = t.size();
    if (end > 1 && t.back() == eos_id) --end;
    if (!t.empty()) toks[i].assign(t.begin() + 1, t.begin() + static_cast<long>(std::max<std::size_t>(end, 1)));
  }

  using Gram = std::vector<TokenId>;
  std::vector<std::vector<std::map<Gram, int>>> counts(n, std::vector<std::map<Gram, int>>(static_cast<std::size_t>(max_n)));
  for (std::size_t i = 0; i < n; ++i)
    for (int g = 1; g <= max_n; ++g)
      for (std::size_t s = 0; s + static_cast<std::size_t>(g) <= toks[i].size(); ++s)
        ++counts[i][static_cast<std::size_t>(g - 1)][Gram(toks[i].begin() + static_cast<long>(s),
                                                          toks[i].begin() + static_cast<long>(s) + g)];

  // Per n-gram: the largest count, how many samples reach it, and the
  // runner-up. The max over "all samples but i" follows without an O(n^2) scan.
  struct Top {
    int best = 0, holders = 0, second = 0;
  };
  std::vector<std::map<Gram, Top>> top(static_cast<std::size_t>(max_n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t g = 0; g < static_cast<std::size_t>(max_n); ++g)
      for (const auto& [gram, c] : counts[i][g]) {
        Top& t = top[g][gram];
        if (c > t.best) {
          t.second = t.best;
          t.best = c;
          t.holders = 1;
        } else if (c == t.best) {
          ++t.holders;
        } else if (c > t.second) {
          t.second = c;
        }
      }

  std::map<std::size_t, int> len_hist;
  for (const auto& t : toks) ++len_hist[t.size()];

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = toks[i].size();
    if (c == 0) continue;
    const int order = std::min<int>(max_n, static_cast<int>(c));
    double log_p = 0.0;
    bool zero = false;
    for (int g = 1; g <= order; ++g) {
      int clipped = 0, denom = 0;
      for (const auto& [gram, cnt] : counts[i][static_cast<std::size_t>(g - 1)]) {
        const Top& t = top[static_cast<std::size_t>(g - 1)].at(gram);
        const int others = (cnt == t.best && t.holders == 1) ? t.second : t.best;
        clipped += std::min(cnt, others);
        denom += cnt;
      }
      if (clipped == 0) {
        zero = true;
        break;
      }
      log_p += std::log(static_cast<double>(clipped) / denom) / order;
    }
    if (zero) continue;

    // Closest reference length among the others, shorter on ties.
    std::size_t ref = 0;
    long best_gap = -1;
    for (const auto& [len, k] : len_hist) {
      if (len == c && k == 1) continue;
      const long gap = std::labs(static_cast<long>(len) - static_cast<long>(c));
      if (best_gap < 0 || gap < best_gap) {
        best_gap = gap;
        ref = len;
      }
    }
    const double bp = c > ref ? 1.0 : std::exp(1.0 - static_cast<double>(ref) / static_cast<double>(c));
    total += bp * std::exp(log_p);
  }
  return total / static_cast<double>(n);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman needs two equal-length series");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double mean_tree_kl(const Policy& p, const Policy& q, const Dataset& prompts, int max_len) {
  if (prompts.empty()) throw std::invalid_argument("KL evaluation needs prompts");
  double s = 0.0;
  for (const auto& r : prompts.records) s += exact_tree_kl(p, q, EnumSpace{p.vocab(), max_len, r.prompt});
  return s / static_cast<double>(prompts.size());
}

// ---------------------------------------------------------------- records

namespace {

void put_opt(json& j, const char* key, const std::optional<double>& v) {
  if (v) j[key] = *v;
}

std::optional<double> get_opt(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

}  // namespace

std::string to_json_line(const MetricRecord& r) {
  if (!std::isfinite(r.value)) throw std::invalid_argument("metric '" + r.metric + "' is not finite");
  json j{{"metric", r.metric}, {"value", r.value}, {"seed", r.seed}};
  if (!r.method.empty()) j["method"] = r.method;
  put_opt(j, "temperature", r.temperature);
  put_opt(j, "data_fraction", r.data_fraction);
  put_opt(j, "lambda", r.lambda);
  put_opt(j, "tau_prime", r.tau_prime);
  if (r.hidden) j["hidden"] = *r.hidden;
  return j.dump();
}

MetricRecord metric_record_from_json(const std::string& line) {
  const json j = json::parse(line);
  MetricRecord r;
  r.metric = j.at("metric").get<std::string>();
  r.value = j.at("value").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("method")) r.method = j["method"].get<std::string>();
  r.temperature = get_opt(j, "temperature");
  r.data_fraction = get_opt(j, "data_fraction");
  r.lambda = get_opt(j, "lambda");
  r.tau_prime = get_opt(j, "tau_prime");
  if (j.contains("hidden")) r.hidden = j["hidden"].get<int>();
  return r;
}

void write_records(const std::filesystem::path& path, const std::vector<MetricRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write records: " + path.string());
  for (const auto& r : records) out << to_json_line(r) << '\n';
}

std::vector<MetricRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open records: " + path.string());
  std::vector<MetricRecord> out;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(metric_record_from_json(line));
  return out;
}

void write_curve(const std::filesystem::path& path, const std::vector<MetricRecord>& records,
                 const std::string& metric, const std::string& axis) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write curve: " + path.string());
  out.precision(17);
  for (const auto& r : records) {
    if (r.metric != metric) continue;
    std::optional<double> x;
    if (axis == "temperature") x = r.temperature;
    else if (axis == "data_fraction") x = r.data_fraction;
    else if (axis == "lambda") x = r.lambda;
    else if (axis == "tau_prime") x = r.tau_prime;
    else if (axis == "hidden" && r.hidden) x = *r.hidden;
    else if (axis == "seed") x = static_cast<double>(r.seed);
    else throw std::invalid_argument("unknown curve axis: " + axis);
    if (x) out << *x << ' ' << r.value << '\n';
  }
}

std::string to_json_line(const StepRecord& r) {
  return json{{"step", r.step},
              {"branch", to_string(r.branch)},
              {"kd_term", r.loss.kd_term},
              {"prior_kl_term", r.loss.prior_kl_term},
              {"td_term", r.loss.td_logdensity_term},
              {"total", r.loss.total},
              {"lr", r.lr}}
      .dump();
}

const char* to_string(SweepMetric m) { return m == SweepMetric::performance ? "performance" : "kl"; }

SweepMetric sweep_metric_from_string(const std::string& s) {
  if (s == "performance") return SweepMetric::performance;
  if (s == "kl") return SweepMetric::kl;
  throw std::invalid_argument("unknown sweep metric: " + s);
}

// ---------------------------------------------------------------- experiments

void ExperimentConfig::validate() const {
  task.validate();
  train.validate();
  if (n_train == 0 || n_eval == 0) throw std::invalid_argument("task.n_train and task.n_eval must be positive");
  if (teacher_k < 0 || student_k < 1) throw std::invalid_argument("context windows must be positive");
  if (hidden < 1) throw std::invalid_argument("student.hidden must be positive");
  if (!(teacher_smoothing > 0.0)) throw std::invalid_argument("teacher.smoothing must be positive");
  if (!(init_std >= 0.0)) throw std::invalid_argument("student.init_std must be non-negative");
  if (teacher_responses < 1) throw std::invalid_argument("train.teacher_responses must be positive");
  if (!(data_fraction > 0.0 && data_fraction <= 1.0)) throw std::invalid_argument("train.data_fraction must lie in (0, 1]");
  if (train.gen.max_len < task.max_len())
    throw std::invalid_argument("gen.max_len must be at least " + std::to_string(task.max_len()) + " for this task");
}

TabularPolicy fit_teacher(const ExperimentConfig& cfg) {
  const auto data = gen_task_data(cfg.task, cfg.n_train, 0);
  return fit_ngram(data.sft, cfg.task.vocab(), cfg.teacher_k, cfg.teacher_smoothing);
}

ExperimentData make_experiment_data(const ExperimentConfig& cfg, const Policy& teacher) {
  auto train = gen_task_data(cfg.task, cfg.n_train, 0);
  ExperimentData d;
  d.prompts = std::move(train.prompts);
  d.sft = std::move(train.sft);
  d.eval = gen_task_data(cfg.task, cfg.n_eval, 1).sft;
  if (cfg.method == Method::blackbox) {
    GenConfig g = cfg.train.gen;
    d.teacher_behavior = gen_teacher_behavior(teacher, d.prompts, cfg.teacher_responses, g, cfg.train.seed);
  }
  return d;
}

double task_performance(const ToyTask& task, const Policy& policy, const Dataset& eval_set, const GenConfig& gen) {
  if (task.kind == TaskKind::modsum) return exact_match(policy, eval_set, gen.max_len);
  return token_accuracy(policy, eval_set, gen);
}

namespace {

Dataset head_fraction(const Dataset& d, double fraction) {
  if (fraction >= 1.0) return d;
  Dataset out;
  out.kind = d.kind;
  const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(d.size()))));
  out.records.assign(d.records.begin(), d.records.begin() + static_cast<long>(std::min(n, d.size())));
  return out;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Policy& teacher, const ExperimentData& data,
                                const TrainHooks& hooks, const NeuralPolicy* init) {
  cfg.validate();
  const Vocab v = cfg.task.vocab();
  if (!(teacher.vocab() == v)) throw std::invalid_argument("teacher vocab does not match the task");

  Rng init_rng(cfg.train.seed, 10);
  ExperimentResult r{0.0, 0.0, 0.0, {}, NeuralPolicy::random(v, cfg.student_k, cfg.hidden, cfg.init_std, init_rng),
                     RewardPosterior(v, cfg.student_k)};
  if (init) {
    if (!(init->vocab() == v)) throw std::invalid_argument("initial student vocab does not match the task");
    r.student = *init;
    r.head = RewardPosterior(v, init->context_window());
  }
  const int len = cfg.train.gen.max_len;
  r.kl_before = mean_tree_kl(teacher, r.student, data.eval, len);

  TrainConfig tc = cfg.train;
  tc.steps = static_cast<int>(std::floor(cfg.data_fraction * cfg.train.steps));
  const Dataset prompts = head_fraction(data.prompts, cfg.data_fraction);
  const Dataset sft_data = head_fraction(data.sft, cfg.data_fraction);

  switch (cfg.method) {
    case Method::sequence:
      r.report = train_sequence_xkd(teacher, r.student, r.head, prompts, tc, hooks);
      break;
    case Method::supervised:
      r.report = train_supervised_xkd(teacher, r.student, r.head, sft_data, tc, hooks);
      break;
    case Method::generalized:
      r.report = train_generalized_xkd(teacher, r.student, r.head, prompts, sft_data, tc, hooks);
      break;
    case Method::blackbox:
      r.report = train_blackbox_xkd(head_fraction(data.teacher_behavior, cfg.data_fraction), r.student, r.head, tc,
                                    hooks);
      break;
  }
  r.kl_after = mean_tree_kl(teacher, r.student, data.eval, len);
  r.performance = task_performance(cfg.task, r.student, data.eval, cfg.train.gen);
  return r;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const TrainHooks& hooks) {
  const auto teacher = fit_teacher(cfg);
  return run_experiment(cfg, teacher, make_experiment_data(cfg, teacher), hooks);
}

// ---------------------------------------------------------------- sweeps

std::vector<MetricRecord> sweep_temperature(const Policy& student, const ToyTask& task, const Dataset& eval_set,
                                            const std::vector<double>& temps, std::size_t n_samples,
                                            const GenConfig& base, std::uint64_t seed) {
  require_eval_set(eval_set);
  if (n_samples < 2) throw std::invalid_argument("temperature sweep needs at least two samples per point");
  std::vector<MetricRecord> out;
  for (double temp : temps) {
    GenConfig g = base;
    g.temperature = temp;
    g.seed = seed;
    Rng rng(seed, 400);
    std::vector<Sequence> samples;
    samples.reserve(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i)
      samples.push_back(sample(student, eval_set.records[i % eval_set.size()].prompt, g, rng));

    MetricRecord perf;
    perf.metric = "performance";
    perf.value = task_performance(task, student, eval_set, g);
    perf.temperature = temp;
    perf.seed = seed;
    MetricRecord div = perf;
    div.metric = "diversity";
    div.value = 1.0 - self_bleu(samples, 2, student.vocab().eos_id);
    out.push_back(perf);
    out.push_back(div);
  }
  return out;
}

std::string MethodVariant::name() const {
  static const char* const xkd_names[] = {"SeqXKD", "SupXKD", "GXKD", "BBSeqXKD"};
  static const char* const kd_names[] = {"SeqKD", "SupKD", "GKD", "BBSeqKD"};
  return (experiential ? xkd_names : kd_names)[static_cast<int>(method)];
}

namespace {

/// Run fn(i) for i in [0, n) over up to `workers` threads; results land by
/// index so ordering never depends on scheduling.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const auto w = static_cast<std::size_t>(std::max(1, std::min<int>(workers, static_cast<int>(n))));
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t begin) {
    for (std::size_t i = begin; i < n; i += w) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (w == 1) {
    run(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t k = 0; k < w; ++k) pool.emplace_back(run, k);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct SweepPoint {
  ExperimentConfig cfg;
  MetricRecord proto;
};

std::vector<MetricRecord> run_points(const std::vector<SweepPoint>& points, const SweepOptions& opt) {
  std::vector<MetricRecord> out(points.size());
  parallel_for(points.size(), opt.workers, [&](std::size_t i) {
    const auto res = run_experiment(points[i].cfg);
    MetricRecord r = points[i].proto;
    r.metric = to_string(opt.metric);
    r.value = opt.metric == SweepMetric::performance ? res.performance : res.kl_after;
    out[i] = r;
  });
  return out;
}

ExperimentConfig with_seed(ExperimentConfig cfg, std::uint64_t seed) {
  cfg.train.seed = seed;
  cfg.train.gen.seed = seed;
  return cfg;
}

MethodVariant variant_of(const ExperimentConfig& cfg) { return {cfg.method, cfg.train.experiential}; }

}  // namespace

std::vector<MetricRecord> sweep_data_fraction(const ExperimentConfig& cfg, const std::vector<double>& fractions,
                                              const std::vector<MethodVariant>& methods, const SweepOptions& opt) {
  std::vector<SweepPoint> points;
  for (std::uint64_t seed : opt.seeds)
    for (const auto& m : methods)
      for (double f : fractions) {
        auto c = with_seed(cfg, seed);
        c.method = m.method;
        c.train.experiential = m.experiential;
        c.data_fraction = f;
        MetricRecord proto;
        proto.method = m.name();
        proto.data_fraction = f;
        proto.seed = seed;
        points.push_back({c, proto});
      }
  return run_points(points, opt);
}

std::vector<MetricRecord> sweep_lambda(const ExperimentConfig& cfg, const std::vector<double>& values,
                                       const SweepOptions& opt) {
  std::vector<SweepPoint> points;
  for (std::uint64_t seed : opt.seeds)
    for (double lam : values) {
      auto c = with_seed(cfg, seed);
      c.train.xkd.lambda = lam;
      MetricRecord proto;
      proto.method = variant_of(c).name();
      proto.lambda = lam;
      proto.seed = seed;
      points.push_back({c, proto});
    }
  return run_points(points, opt);
}

std::vector<MetricRecord> sweep_tau_prime(const ExperimentConfig& cfg, const std::vector<double>& values,
                                          const SweepOptions& opt) {
  std::vector<SweepPoint> points;
  for (std::uint64_t seed : opt.seeds)
    for (double tp : values) {
      auto c = with_seed(cfg, seed);
      c.train.xkd.temps.tau_prime = tp;
      MetricRecord proto;
      proto.method = variant_of(c).name();
      proto.tau_prime = tp;
      proto.seed = seed;
      points.push_back({c, proto});
    }
  return run_points(points, opt);
}

std::vector<MetricRecord> sweep_hidden(const ExperimentConfig& cfg, const std::vector<int>& values,
                                       const SweepOptions& opt) {
  std::vector<SweepPoint> points;
  for (std::uint64_t seed : opt.seeds)
    for (int h : values) {
      auto c = with_seed(cfg, seed);
      c.hidden = h;
      MetricRecord proto;
      proto.method = variant_of(c).name();
      proto.hidden = h;
      proto.seed = seed;
      points.push_back({c, proto});
    }
  return run_points(points, opt);
}

}  // namespace xkd
