#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>

#include "xkd/config.hpp"
#include "xkd/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace xkd;

namespace {

/// A pipeline finished but one of its asserted contracts failed.
struct ContractFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Run {
  Settings s;
  fs::path out;
};

struct Teacher {
  std::unique_ptr<Policy> policy;
};

Teacher load_teacher(const Run& run) {
  const Vocab v = run.s.exp.task.vocab();
  if (!run.s.teacher_checkpoint.empty()) {
    auto ck = load_checkpoint(run.s.teacher_checkpoint, v);
    return std::visit([](auto&& p) { return Teacher{std::make_unique<std::decay_t<decltype(p)>>(std::move(p))}; },
                      std::move(ck.policy));
  }
  if (!run.s.data_sft.empty()) {
    const auto sft = load_dataset(run.s.data_sft, DatasetKind::prompt_response, v);
    return {std::make_unique<TabularPolicy>(fit_ngram(sft, v, run.s.exp.teacher_k, run.s.exp.teacher_smoothing))};
  }
  return {std::make_unique<TabularPolicy>(fit_teacher(run.s.exp))};
}

ExperimentData load_data(const Run& run, const Policy& teacher) {
  const auto& s = run.s;
  const Vocab v = s.exp.task.vocab();
  ExperimentConfig gen_cfg = s.exp;
  if (!s.data_teacher.empty()) gen_cfg.method = Method::sequence;  // skip generating a teacher-behavior set
  ExperimentData d = make_experiment_data(gen_cfg, teacher);
  if (!s.data_sft.empty()) {
    d.sft = load_dataset(s.data_sft, DatasetKind::prompt_response, v);
    if (s.data_prompts.empty()) {
      d.prompts = Dataset{DatasetKind::prompt_only, {}};
      for (const auto& r : d.sft.records) d.prompts.records.push_back({r.prompt, {}});
    }
  }
  if (!s.data_prompts.empty()) d.prompts = load_dataset(s.data_prompts, DatasetKind::prompt_only, v);
  if (!s.data_teacher.empty()) d.teacher_behavior = load_dataset(s.data_teacher, DatasetKind::teacher_behavior, v);
  return d;
}

std::optional<NeuralPolicy> load_student(const Run& run) {
  if (run.s.student_checkpoint.empty()) return std::nullopt;
  auto ck = load_checkpoint(run.s.student_checkpoint, run.s.exp.task.vocab());
  auto* p = std::get_if<NeuralPolicy>(&ck.policy);
  if (!p) throw std::runtime_error("student checkpoint must hold a neural policy: " + run.s.student_checkpoint);
  return std::move(*p);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// Step log to metrics.jsonl plus periodic and final checkpoints.
struct Logging {
  std::ofstream metrics;
  TrainHooks hooks;

  explicit Logging(const Run& run) : metrics(run.out / "metrics.jsonl") {
    if (!metrics) throw std::runtime_error("cannot write " + (run.out / "metrics.jsonl").string());
    const fs::path out = run.out;
    hooks.on_step = [this](const StepRecord& r, std::span<const double>, std::span<const double>) {
      metrics << to_json_line(r) << '\n';
    };
    hooks.checkpoint_every = run.s.checkpoint_every;
    const int total = run.s.exp.train.steps;
    hooks.checkpoint = [out, total](int step, const NeuralPolicy& p, const RewardPosterior* head) {
      const fs::path path = step >= total ? out / "student.ckpt"
                                          : out / "checkpoints" / ("step_" + std::to_string(step) + ".ckpt");
      save_checkpoint(path, p, head);
      return path.string();
    };
  }
};

json report_json(const TrainReport& r) {
  const auto d = windowed_descent(r);
  return {{"steps", r.log.size()},
          {"checkpoint", r.checkpoint},
          {"wall_seconds", r.wall_seconds},
          {"seed", r.seed},
          {"offline_draws", r.offline_draws},
          {"on_policy_draws", r.on_policy_draws},
          {"teacher_draws", r.teacher_draws},
          {"initial_window_loss", d.initial},
          {"final_window_loss", d.final}};
}

void check_descent(const TrainReport& r) {
  if (r.log.empty()) return;
  const auto d = windowed_descent(r);
  std::cout << "loss: initial window " << d.initial << ", final window " << d.final << '\n';
  if (!d.descended()) throw ContractFailure("training loss did not descend");
}

int cmd_sft(const Run& run) {
  const auto& s = run.s;
  const Vocab v = s.exp.task.vocab();
  const Dataset data = s.data_sft.empty() ? gen_task_data(s.exp.task, s.exp.n_train, 0).sft
                                          : load_dataset(s.data_sft, DatasetKind::prompt_response, v);
  Rng init(s.seed(), 10);
  NeuralPolicy student = load_student(run).value_or(NeuralPolicy::random(v, s.exp.student_k, s.exp.hidden,
                                                                         s.exp.init_std, init));
  Logging log(run);
  const auto report = sft(student, data, s.exp.train, log.hooks);
  write_json(run.out / "summary.json", {{"command", "sft"}, {"train", report_json(report)}});
  check_descent(report);
  return 0;
}

int cmd_distill(const Run& run, bool blackbox) {
  Settings s = run.s;
  if (blackbox) s.exp.method = Method::blackbox;
  else if (s.exp.method == Method::blackbox)
    throw std::invalid_argument("train.method: use the distill-blackbox command for the black-box method");
  const Run r{s, run.out};
  const auto teacher = load_teacher(r);
  const auto data = load_data(r, *teacher.policy);
  const auto init = load_student(r);
  Logging log(r);
  const auto res = run_experiment(s.exp, *teacher.policy, data, log.hooks, init ? &*init : nullptr);
  std::cout << "KL(teacher || student): " << res.kl_before << " -> " << res.kl_after << '\n'
            << "performance: " << res.performance << '\n';
  write_json(r.out / "summary.json", {{"command", blackbox ? "distill-blackbox" : "distill"},
                                      {"method", MethodVariant{s.exp.method, s.exp.train.experiential}.name()},
                                      {"kl_before", res.kl_before},
                                      {"kl_after", res.kl_after},
                                      {"performance", res.performance},
                                      {"train", report_json(res.report)}});
  check_descent(res.report);
  return 0;
}

void write_curves(const fs::path& out, const std::vector<MetricRecord>& records, const std::string& axis) {
  std::map<std::pair<std::string, std::string>, std::vector<MetricRecord>> groups;
  for (const auto& r : records) groups[{r.metric, r.method}].push_back(r);
  for (const auto& [key, recs] : groups) {
    const std::string name = key.first + (key.second.empty() ? "" : "_" + key.second) + ".xy";
    write_curve(out / name, recs, key.first, axis);
  }
}

/// Spearman rho between temperature and mean diversity across seeds.
double temperature_rho(const std::vector<MetricRecord>& records) {
  std::map<double, std::pair<double, int>> acc;
  for (const auto& r : records)
    if (r.metric == "diversity") {
      auto& a = acc[*r.temperature];
      a.first += r.value;
      ++a.second;
    }
  std::vector<double> t, d;
  for (const auto& [temp, a] : acc) {
    t.push_back(temp);
    d.push_back(a.first / a.second);
  }
  return t.size() < 2 ? 0.0 : spearman(t, d);
}

int cmd_eval(const Run& run) {
  const auto& s = run.s;
  const auto student = *load_student(run);
  const auto teacher = load_teacher(run);
  const Dataset eval_set = gen_task_data(s.exp.task, s.exp.n_eval, 1).sft;
  const int len = s.exp.train.gen.max_len;
  const double kl = mean_tree_kl(*teacher.policy, student, eval_set, len);
  const double perf = task_performance(s.exp.task, student, eval_set, s.exp.train.gen);
  const double em = exact_match(student, eval_set, len);
  const auto records =
      sweep_temperature(student, s.exp.task, eval_set, s.eval_temperatures, s.eval_samples, s.exp.train.gen, s.seed());
  write_records(run.out / "records.jsonl", records);
  write_curves(run.out, records, "temperature");
  std::cout << "KL(teacher || student): " << kl << "\nperformance: " << perf << "\nexact match: " << em << '\n';
  for (const auto& r : records) std::cout << r.metric << " @ T=" << *r.temperature << ": " << r.value << '\n';
  write_json(run.out / "summary.json",
             {{"command", "eval"}, {"kl", kl}, {"performance", perf}, {"exact_match", em}});
  return 0;
}

int cmd_sweep(const Run& run) {
  const auto& s = run.s;
  SweepOptions opt;
  opt.seeds.clear();
  for (int i = 0; i < s.sweep_seeds; ++i) opt.seeds.push_back(s.seed() + static_cast<std::uint64_t>(i));
  opt.metric = s.sweep_metric;
  opt.workers = s.sweep_workers;
  auto values = [&](const std::vector<double>& ticks) { return s.sweep_values.empty() ? ticks : s.sweep_values; };

  std::vector<MetricRecord> records;
  std::string axis = to_string(s.sweep_kind);
  switch (s.sweep_kind) {
    case SweepKind::temperature: {
      const auto teacher = fit_teacher(s.exp);
      for (auto seed : opt.seeds) {
        ExperimentConfig c = s.exp;
        c.train.seed = c.train.gen.seed = seed;
        const auto data = make_experiment_data(c, teacher);
        const auto res = run_experiment(c, teacher, data);
        auto rec = sweep_temperature(res.student, c.task, data.eval, values(kTemperatureTicks), s.eval_samples,
                                     c.train.gen, seed);
        for (auto& r : rec) r.method = MethodVariant{c.method, c.train.experiential}.name();
        records.insert(records.end(), rec.begin(), rec.end());
      }
      const double rho = temperature_rho(records);
      std::cout << "spearman(temperature, diversity) = " << rho << '\n';
      write_records(run.out / "records.jsonl", records);
      write_curves(run.out, records, axis);
      if (!(rho > 0.0)) throw ContractFailure("diversity does not increase with temperature");
      return 0;
    }
    case SweepKind::data_fraction: {
      std::vector<MethodVariant> methods;
      for (const auto& m : s.sweep_methods) methods.push_back(method_variant_from_string(m));
      records = sweep_data_fraction(s.exp, values(kDataFractions), methods, opt);
      break;
    }
    case SweepKind::lambda: {
      const auto vals = values(kLambdaTicks);
      records = sweep_lambda(s.exp, vals, opt);
      ExperimentConfig base = s.exp;
      base.train.experiential = false;
      auto baseline = sweep_lambda(base, {0.0}, opt);
      for (auto& r : baseline) r.lambda.reset();
      for (const auto& b : baseline)
        for (const auto& r : records)
          if (r.seed == b.seed && r.lambda && *r.lambda == 0.0 && r.value != b.value)
            throw ContractFailure("lambda=0 point differs from the non-experiential baseline");
      records.insert(records.end(), baseline.begin(), baseline.end());
      break;
    }
    case SweepKind::tau_prime:
      records = sweep_tau_prime(s.exp, values(kTauPrimeTicks), opt);
      break;
    case SweepKind::hidden: {
      std::vector<int> hs;
      for (double h : values({8, 16, 32, 64})) hs.push_back(static_cast<int>(h));
      records = sweep_hidden(s.exp, hs, opt);
      break;
    }
  }
  write_records(run.out / "records.jsonl", records);
  write_curves(run.out, records, axis);
  for (const auto& r : records) std::cout << to_json_line(r) << '\n';
  return 0;
}

int cmd_verify(const Run& run) {
  const auto results = run_verify_suite(run.s.seed(), run.s.verify_instances);
  std::ofstream out(run.out / "verify.jsonl");
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.pass() ? "PASS " : "FAIL ") << r.name << " residual=" << r.residual << " tol=" << r.tolerance
              << '\n';
    out << json{{"check", r.name}, {"residual", r.residual}, {"tolerance", r.tolerance}, {"pass", r.pass()}}.dump()
        << '\n';
    ok = ok && r.pass();
  }
  if (!ok) throw ContractFailure("identity check failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Experiential knowledge distillation toolkit"};
  app.require_subcommand(1);
  std::string config_path, out_dir = "xkd_out";
  std::vector<std::string> overrides;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"sft", "supervised fine-tuning on prompt-response pairs"},
      {"distill", "white-box distillation (sequence, supervised or generalized)"},
      {"distill-blackbox", "black-box sequence-level distillation on stored teacher responses"},
      {"eval", "evaluate a student checkpoint"},
      {"sweep", "run a sweep harness"},
      {"verify", "run the identity checks on random policies"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "key=value config file")->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "override key=value (repeatable)");
    sub->add_option("--out", out_dir, "output directory");
  }
  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    Run run{config_path.empty() ? parse_config("", overrides) : load_config(config_path, overrides), out_dir};
    if (const char* env = std::getenv("XKD_SEED")) {
      try {
        run.s.set_seed(std::stoull(env));
      } catch (const std::exception&) {
        throw ConfigError("XKD_SEED", 0, std::string("expected an integer, got '") + env + "'");
      }
    }
    require_keys(run.s, command);
    fs::create_directories(run.out);
    {
      std::ofstream echo(run.out / "config.txt");
      echo << format_config(run.s);
    }
    if (command == "sft") return cmd_sft(run);
    if (command == "distill") return cmd_distill(run, false);
    if (command == "distill-blackbox") return cmd_distill(run, true);
    if (command == "eval") return cmd_eval(run);
    if (command == "sweep") return cmd_sweep(run);
    return cmd_verify(run);
  } catch (const ContractFailure& e) {
    std::cerr << "contract failed: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
