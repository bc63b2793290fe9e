#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xkd/checkpoint.hpp"
#include "xkd/trainer.hpp"

namespace xkd {

enum class TaskKind { copy, reverse, modsum };
const char* to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

/// Toy sequence task over content tokens. Ids 0 and 1 are BOS/EOS; content
/// value c is token id c + 2.
struct ToyTask {
  TaskKind kind = TaskKind::copy;
  int content_size = 6;
  int prompt_len = 3;
  std::uint64_t seed = 0;

  Vocab vocab() const { return Vocab{content_size + 2, 0, 1}; }
  /// Generated tokens in a gold response, EOS included.
  int max_len() const { return (kind == TaskKind::modsum ? 1 : prompt_len) + 1; }
  static TokenId token(int content_value) { return content_value + 2; }
  static int value(TokenId id) { return id - 2; }
  void validate() const;
  bool operator==(const ToyTask&) const = default;
};

struct TaskData {
  Dataset prompts;  // prompt-only
  Dataset sft;      // prompt-response with gold responses
};

Sequence gold_response(const ToyTask& task, const Prompt& x);

/// n prompts drawn from the task's generator stream; `stream` separates
/// disjoint draws (train, eval) under one task seed.
TaskData gen_task_data(const ToyTask& task, std::size_t n, std::uint64_t stream = 0);

/// Teacher-behavior dataset: n_responses teacher samples per prompt.
Dataset gen_teacher_behavior(const Policy& teacher, const Dataset& prompts, int n_responses, const GenConfig& gen,
                             std::uint64_t seed);

Sequence greedy_decode(const Policy& policy, const Prompt& x, int max_len);

/// Fraction of gold generated tokens (EOS included) reproduced position-wise
/// by a sample drawn with `gen`, averaged over the set.
double token_accuracy(const Policy& policy, const Dataset& eval_set, const GenConfig& gen);

/// Greedy decode compared token-for-token with the gold response.
double exact_match(const Policy& policy, const Dataset& eval_set, int max_len);

/// Mean BLEU of each sample against all others (modified n-gram precision up
/// to max_n, geometric mean, closest-length brevity penalty). BOS and the
/// closing EOS are stripped before counting.
double self_bleu(const std::vector<Sequence>& samples, int max_n = 2, TokenId eos_id = 1);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

/// Mean exact sequence KL(p || q) over the prompts of `prompts`.
double mean_tree_kl(const Policy& p, const Policy& q, const Dataset& prompts, int max_len);

struct MetricRecord {
  std::string metric;
  double value = 0.0;
  std::string method;
  std::optional<double> temperature;
  std::optional<double> data_fraction;
  std::optional<double> lambda;
  std::optional<double> tau_prime;
  std::optional<int> hidden;
  std::uint64_t seed = 0;

  bool operator==(const MetricRecord&) const = default;
};

std::string to_json_line(const MetricRecord& r);
MetricRecord metric_record_from_json(const std::string& line);
void write_records(const std::filesystem::path& path, const std::vector<MetricRecord>& records);
std::vector<MetricRecord> read_records(const std::filesystem::path& path);

/// Two-column "x y" file for one metric; x is the named axis field.
void write_curve(const std::filesystem::path& path, const std::vector<MetricRecord>& records,
                 const std::string& metric, const std::string& axis);

std::string to_json_line(const StepRecord& r);

enum class SweepMetric { performance, kl };
const char* to_string(SweepMetric m);
SweepMetric sweep_metric_from_string(const std::string& s);

/// Everything one distillation run needs. Datasets are generated from the task
/// unless supplied.
struct ExperimentConfig {
  ToyTask task;
  std::size_t n_train = 256;
  std::size_t n_eval = 200;
  int teacher_k = 1;
  double teacher_smoothing = 0.01;
  int student_k = 2;
  int hidden = 32;
  double init_std = 0.1;
  Method method = Method::generalized;
  int teacher_responses = 10;
  double data_fraction = 1.0;
  TrainConfig train;

  ExperimentConfig() { train.gen.max_len = task.max_len(); }
  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

struct ExperimentData {
  Dataset prompts, sft, eval, teacher_behavior;
};

ExperimentData make_experiment_data(const ExperimentConfig& cfg, const Policy& teacher);

struct ExperimentResult {
  double kl_before = 0.0;
  double kl_after = 0.0;
  double performance = 0.0;
  TrainReport report;
  NeuralPolicy student;
  RewardPosterior head;
};

TabularPolicy fit_teacher(const ExperimentConfig& cfg);

/// Task metric: token accuracy (copy, reverse) at the training temperature or
/// exact match (modsum).
double task_performance(const ToyTask& task, const Policy& policy, const Dataset& eval_set, const GenConfig& gen);

ExperimentResult run_experiment(const ExperimentConfig& cfg, const TrainHooks& hooks = {});
/// Same, with an externally supplied teacher and data. A non-null init
/// replaces the random student initialization (e.g. an SFT checkpoint).
ExperimentResult run_experiment(const ExperimentConfig& cfg, const Policy& teacher, const ExperimentData& data,
                                const TrainHooks& hooks = {}, const NeuralPolicy* init = nullptr);

struct SweepOptions {
  std::vector<std::uint64_t> seeds{0};
  SweepMetric metric = SweepMetric::performance;
  int workers = 1;
};

std::vector<MetricRecord> sweep_temperature(const Policy& student, const ToyTask& task, const Dataset& eval_set,
                                            const std::vector<double>& temps, std::size_t n_samples,
                                            const GenConfig& base, std::uint64_t seed);

/// Variants are (method, experiential) pairs; steps and training data are
/// scaled by each fraction.
struct MethodVariant {
  Method method = Method::generalized;
  bool experiential = true;
  std::string name() const;
  bool operator==(const MethodVariant&) const = default;
};

std::vector<MetricRecord> sweep_data_fraction(const ExperimentConfig& cfg, const std::vector<double>& fractions,
                                              const std::vector<MethodVariant>& methods, const SweepOptions& opt);
std::vector<MetricRecord> sweep_lambda(const ExperimentConfig& cfg, const std::vector<double>& values,
                                       const SweepOptions& opt);
std::vector<MetricRecord> sweep_tau_prime(const ExperimentConfig& cfg, const std::vector<double>& values,
                                          const SweepOptions& opt);
std::vector<MetricRecord> sweep_hidden(const ExperimentConfig& cfg, const std::vector<int>& values,
                                       const SweepOptions& opt);

inline const std::vector<double> kTemperatureTicks{0.1, 0.3, 0.5, 1.0};
inline const std::vector<double> kLambdaTicks{0.0, 0.005, 0.01, 0.015, 0.02};
inline const std::vector<double> kTauPrimeTicks{0.1, 0.3, 0.5, 1.0};
inline const std::vector<double> kDataFractions{0.25, 0.5, 0.75, 1.0};

}  // namespace xkd
