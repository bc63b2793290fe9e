#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "xkd/eval.hpp"

namespace xkd {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& key, std::size_t line, const std::string& what);
  const std::string& key() const { return key_; }
  std::size_t line() const { return line_; }

 private:
  std::string key_;
  std::size_t line_;
};

enum class SweepKind { temperature, data_fraction, lambda, tau_prime, hidden };
const char* to_string(SweepKind k);
SweepKind sweep_kind_from_string(const std::string& s);

/// Fully typed run configuration. Empty paths mean "generate from the task".
struct Settings {
  ExperimentConfig exp;

  std::string data_prompts, data_sft, data_teacher;
  std::string teacher_checkpoint;
  std::string student_checkpoint;
  int checkpoint_every = 0;

  std::size_t eval_samples = 500;
  std::vector<double> eval_temperatures = kTemperatureTicks;

  SweepKind sweep_kind = SweepKind::lambda;
  std::vector<double> sweep_values;  // empty: the standard ticks for the kind
  int sweep_seeds = 5;
  SweepMetric sweep_metric = SweepMetric::performance;
  std::vector<std::string> sweep_methods{"GKD", "GXKD"};
  int sweep_workers = 1;

  int verify_instances = 10;

  std::uint64_t seed() const { return exp.train.seed; }
  void set_seed(std::uint64_t s);
  bool operator==(const Settings&) const = default;
};

/// "key = value" lines with dotted keys; "#" starts a comment line. Overrides
/// are "key=value" strings applied after the file.
Settings parse_config(const std::string& text, const std::vector<std::string>& overrides = {},
                      const std::string& origin = "<config>");
Settings load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Every key with its effective value, in a form parse_config reads back to
/// an identical Settings.
std::string format_config(const Settings& s);

std::vector<std::string> config_keys();

/// Keys a command cannot run without; throws ConfigError naming the first
/// missing one.
void require_keys(const Settings& s, const std::string& command);

MethodVariant method_variant_from_string(const std::string& name);

}  // namespace xkd
