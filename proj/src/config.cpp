#include "xkd/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace xkd {

ConfigError::ConfigError(const std::string& key, std::size_t line, const std::string& what)
    : std::runtime_error((line ? "line " + std::to_string(line) + ": " : std::string()) + key + ": " + what),
      key_(key),
      line_(line) {}

const char* to_string(SweepKind k) {
  switch (k) {
    case SweepKind::temperature: return "temperature";
    case SweepKind::data_fraction: return "data_fraction";
    case SweepKind::lambda: return "lambda";
    case SweepKind::tau_prime: return "tau_prime";
    case SweepKind::hidden: return "hidden";
  }
  return "?";
}

SweepKind sweep_kind_from_string(const std::string& s) {
  for (auto k : {SweepKind::temperature, SweepKind::data_fraction, SweepKind::lambda, SweepKind::tau_prime,
                 SweepKind::hidden})
    if (s == to_string(k)) return k;
  throw std::invalid_argument("unknown sweep kind: " + s);
}

void Settings::set_seed(std::uint64_t s) {
  exp.train.seed = s;
  exp.train.gen.seed = s;
}

MethodVariant method_variant_from_string(const std::string& name) {
  for (auto m : {Method::sequence, Method::supervised, Method::generalized, Method::blackbox})
    for (bool e : {false, true})
      if (MethodVariant{m, e}.name() == name) return {m, e};
  throw std::invalid_argument("unknown method variant: " + name);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& s) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    if constexpr (std::is_floating_point_v<T>) throw std::invalid_argument("expected a number, got '" + s + "'");
    else throw std::invalid_argument("expected an integer, got '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("expected true or false, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

std::string fmt_list(const std::vector<double>& v) {
  std::vector<std::string> s;
  for (double d : v) s.push_back(fmt(d));
  return join(s);
}

struct Field {
  std::string key;
  std::function<void(Settings&, const std::string&)> set;
  std::function<std::string(const Settings&)> get;
};

using Check = std::function<bool(double)>;

Check positive() { return [](double v) { return v > 0.0; }; }
Check non_negative() { return [](double v) { return v >= 0.0; }; }
Check unit() { return [](double v) { return v >= 0.0 && v <= 1.0; }; }

template <class T, class Acc>
Field number(std::string key, Acc acc, Check ok = {}, std::string bound = {}) {
  return {key,
          [=](Settings& s, const std::string& v) {
            const T x = parse_number<T>(v);
            if (ok && !ok(static_cast<double>(x))) throw std::out_of_range("value " + v + " out of bounds: " + bound);
            acc(s) = x;
          },
          [=](const Settings& s) {
            if constexpr (std::is_floating_point_v<T>) return fmt(acc(const_cast<Settings&>(s)));
            else return std::to_string(acc(const_cast<Settings&>(s)));
          }};
}

template <class Acc>
Field text(std::string key, Acc acc) {
  return {key, [=](Settings& s, const std::string& v) { acc(s) = v; },
          [=](const Settings& s) { return acc(const_cast<Settings&>(s)); }};
}

template <class Acc, class Parse>
Field enumerated(std::string key, Acc acc, Parse parse) {
  return {key, [=](Settings& s, const std::string& v) { acc(s) = parse(v); },
          [=](const Settings& s) { return std::string(to_string(acc(const_cast<Settings&>(s)))); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"seed", [](Settings& s, const std::string& v) { s.set_seed(parse_number<std::uint64_t>(v)); },
                 [](const Settings& s) { return std::to_string(s.seed()); }});

    f.push_back(enumerated("task.kind", [](Settings& s) -> TaskKind& { return s.exp.task.kind; }, task_kind_from_string));
    f.push_back(number<int>("task.content_size", [](Settings& s) -> int& { return s.exp.task.content_size; },
                            positive(), "> 0"));
    f.push_back(number<int>("task.prompt_len", [](Settings& s) -> int& { return s.exp.task.prompt_len; }, positive(),
                            "> 0"));
    f.push_back(number<std::uint64_t>("task.seed", [](Settings& s) -> std::uint64_t& { return s.exp.task.seed; }));
    f.push_back(number<std::size_t>("task.n_train", [](Settings& s) -> std::size_t& { return s.exp.n_train; },
                                    positive(), "> 0"));
    f.push_back(number<std::size_t>("task.n_eval", [](Settings& s) -> std::size_t& { return s.exp.n_eval; },
                                    positive(), "> 0"));

    f.push_back(text("data.prompts", [](Settings& s) -> std::string& { return s.data_prompts; }));
    f.push_back(text("data.sft", [](Settings& s) -> std::string& { return s.data_sft; }));
    f.push_back(text("data.teacher", [](Settings& s) -> std::string& { return s.data_teacher; }));

    f.push_back(number<int>("teacher.k", [](Settings& s) -> int& { return s.exp.teacher_k; }, non_negative(), ">= 0"));
    f.push_back(number<double>("teacher.smoothing", [](Settings& s) -> double& { return s.exp.teacher_smoothing; },
                               positive(), "> 0"));
    f.push_back(text("teacher.checkpoint", [](Settings& s) -> std::string& { return s.teacher_checkpoint; }));

    f.push_back(number<int>("student.k", [](Settings& s) -> int& { return s.exp.student_k; }, positive(), "> 0"));
    f.push_back(number<int>("student.hidden", [](Settings& s) -> int& { return s.exp.hidden; }, positive(), "> 0"));
    f.push_back(number<double>("student.init_std", [](Settings& s) -> double& { return s.exp.init_std; },
                               non_negative(), ">= 0"));
    f.push_back(text("student.checkpoint", [](Settings& s) -> std::string& { return s.student_checkpoint; }));

    f.push_back(number<double>("head.prior_mean", [](Settings& s) -> double& { return s.exp.train.xkd.prior.mean; }));
    f.push_back(number<double>("head.prior_std", [](Settings& s) -> double& { return s.exp.train.xkd.prior.std; },
                               positive(), "> 0"));

    f.push_back(enumerated("train.method", [](Settings& s) -> Method& { return s.exp.method; }, method_from_string));
    f.push_back(number<int>("train.steps", [](Settings& s) -> int& { return s.exp.train.steps; }, non_negative(),
                            ">= 0"));
    f.push_back(number<int>("train.batch_size", [](Settings& s) -> int& { return s.exp.train.batch_size; },
                            positive(), "> 0"));
    f.push_back(number<double>("train.lr", [](Settings& s) -> double& { return s.exp.train.lr; }, positive(), "> 0"));
    f.push_back(enumerated("train.lr_schedule", [](Settings& s) -> LrSchedule& { return s.exp.train.lr_schedule; },
                           lr_schedule_from_string));
    f.push_back(number<int>("train.warmup_steps", [](Settings& s) -> int& { return s.exp.train.warmup_steps; },
                            non_negative(), ">= 0"));
    f.push_back(enumerated("train.optimizer", [](Settings& s) -> OptimizerKind& { return s.exp.train.optimizer.kind; },
                           optimizer_from_string));
    f.push_back(number<double>("train.adam_beta1", [](Settings& s) -> double& { return s.exp.train.optimizer.beta1; },
                               [](double v) { return v >= 0.0 && v < 1.0; }, "[0, 1)"));
    f.push_back(number<double>("train.adam_beta2", [](Settings& s) -> double& { return s.exp.train.optimizer.beta2; },
                               [](double v) { return v >= 0.0 && v < 1.0; }, "[0, 1)"));
    f.push_back(number<double>("train.adam_eps", [](Settings& s) -> double& { return s.exp.train.optimizer.eps; },
                               positive(), "> 0"));
    f.push_back(number<double>("train.max_grad_norm", [](Settings& s) -> double& { return s.exp.train.max_grad_norm; },
                               non_negative(), ">= 0"));
    f.push_back({"train.experiential",
                 [](Settings& s, const std::string& v) { s.exp.train.experiential = parse_bool(v); },
                 [](const Settings& s) { return std::string(s.exp.train.experiential ? "true" : "false"); }});
    f.push_back(number<int>("train.workers", [](Settings& s) -> int& { return s.exp.train.workers; }, positive(),
                            "> 0"));
    f.push_back(number<int>("train.checkpoint_every", [](Settings& s) -> int& { return s.checkpoint_every; },
                            non_negative(), ">= 0"));
    f.push_back(number<int>("train.teacher_responses", [](Settings& s) -> int& { return s.exp.teacher_responses; },
                            positive(), "> 0"));
    f.push_back(number<double>("train.data_fraction", [](Settings& s) -> double& { return s.exp.data_fraction; },
                               [](double v) { return v > 0.0 && v <= 1.0; }, "(0, 1]"));

    f.push_back(number<double>("xkd.lambda", [](Settings& s) -> double& { return s.exp.train.xkd.lambda; },
                               non_negative(), ">= 0"));
    f.push_back(number<double>("xkd.gamma", [](Settings& s) -> double& { return s.exp.train.xkd.gamma; }, unit(),
                               "[0, 1]"));
    f.push_back(number<double>("xkd.alpha", [](Settings& s) -> double& { return s.exp.train.xkd.alpha; }, unit(),
                               "[0, 1]"));
    f.push_back(number<double>("xkd.beta", [](Settings& s) -> double& { return s.exp.train.xkd.beta; }, unit(),
                               "[0, 1]"));
    f.push_back(number<double>("xkd.tau", [](Settings& s) -> double& { return s.exp.train.xkd.temps.tau; },
                               positive(), "> 0"));
    f.push_back(number<double>("xkd.tau_prime", [](Settings& s) -> double& { return s.exp.train.xkd.temps.tau_prime; },
                               positive(), "> 0"));
    f.push_back(enumerated("xkd.divergence", [](Settings& s) -> DivergenceMode& { return s.exp.train.xkd.divergence; },
                           divergence_mode_from_string));
    f.push_back(enumerated("xkd.student_view",
                           [](Settings& s) -> StudentView& { return s.exp.train.xkd.student_view; },
                           student_view_from_string));

    f.push_back(number<double>("gen.temperature", [](Settings& s) -> double& { return s.exp.train.gen.temperature; },
                               positive(), "> 0"));
    f.push_back(number<double>("gen.top_p", [](Settings& s) -> double& { return s.exp.train.gen.top_p; },
                               [](double v) { return v > 0.0 && v <= 1.0; }, "(0, 1]"));
    f.push_back(number<int>("gen.max_len", [](Settings& s) -> int& { return s.exp.train.gen.max_len; }, positive(),
                            "> 0"));

    f.push_back(number<std::size_t>("eval.n_samples", [](Settings& s) -> std::size_t& { return s.eval_samples; },
                                    [](double v) { return v >= 2; }, ">= 2"));
    f.push_back({"eval.temperatures",
                 [](Settings& s, const std::string& v) {
                   std::vector<double> out;
                   for (const auto& item : split_list(v)) {
                     out.push_back(parse_number<double>(item));
                     if (!(out.back() > 0.0)) throw std::out_of_range("temperatures must be positive");
                   }
                   if (out.empty()) throw std::invalid_argument("need at least one temperature");
                   s.eval_temperatures = out;
                 },
                 [](const Settings& s) { return fmt_list(s.eval_temperatures); }});

    f.push_back(enumerated("sweep.kind", [](Settings& s) -> SweepKind& { return s.sweep_kind; },
                           sweep_kind_from_string));
    f.push_back({"sweep.values",
                 [](Settings& s, const std::string& v) {
                   std::vector<double> out;
                   for (const auto& item : split_list(v)) out.push_back(parse_number<double>(item));
                   s.sweep_values = out;
                 },
                 [](const Settings& s) { return fmt_list(s.sweep_values); }});
    f.push_back(number<int>("sweep.seeds", [](Settings& s) -> int& { return s.sweep_seeds; }, positive(), "> 0"));
    f.push_back(enumerated("sweep.metric", [](Settings& s) -> SweepMetric& { return s.sweep_metric; },
                           sweep_metric_from_string));
    f.push_back({"sweep.methods",
                 [](Settings& s, const std::string& v) {
                   auto names = split_list(v);
                   if (names.empty()) throw std::invalid_argument("need at least one method");
                   for (const auto& n : names) method_variant_from_string(n);
                   s.sweep_methods = names;
                 },
                 [](const Settings& s) { return join(s.sweep_methods); }});
    f.push_back(number<int>("sweep.workers", [](Settings& s) -> int& { return s.sweep_workers; }, positive(), "> 0"));

    f.push_back(number<int>("verify.instances", [](Settings& s) -> int& { return s.verify_instances; }, positive(),
                            "> 0"));
    return f;
  }();
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

void assign(Settings& s, const std::string& key, const std::string& value, std::size_t line) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError(key, line, "unknown key");
  try {
    f->set(s, value);
  } catch (const std::out_of_range& e) {
    throw ConfigError(key, line, std::string("bounds error: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key, line, std::string("type error: ") + e.what());
  }
}

/// Map a whole-config validation message back to the key it names.
[[noreturn]] void rethrow_validation(const std::invalid_argument& e) {
  const std::string msg = e.what();
  std::string key = "config";
  std::size_t best = 0;
  for (const auto& f : fields())
    if (msg.find(f.key) != std::string::npos && f.key.size() > best) {
      key = f.key;
      best = f.key.size();
    }
  throw ConfigError(key, 0, msg);
}

}  // namespace

Settings parse_config(const std::string& text, const std::vector<std::string>& overrides, const std::string& origin) {
  Settings s;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin, line_no, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (!seen.insert(key).second) throw ConfigError(key, line_no, "duplicate key");
    assign(s, key, trim(line.substr(eq + 1)), line_no);
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError(o, 0, "override must be key=value");
    seen.insert(trim(o.substr(0, eq)));
    assign(s, trim(o.substr(0, eq)), trim(o.substr(eq + 1)), 0);
  }
  if (!seen.count("gen.max_len")) s.exp.train.gen.max_len = s.exp.task.max_len();
  try {
    s.exp.validate();
  } catch (const std::invalid_argument& e) {
    rethrow_validation(e);
  }
  return s;
}

Settings load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides, path.string());
}

std::string format_config(const Settings& s) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(s) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

void require_keys(const Settings& s, const std::string& command) {
  if (command == "eval" && s.student_checkpoint.empty())
    throw ConfigError("student.checkpoint", 0, "missing required key for 'eval'");
}

}  // namespace xkd
