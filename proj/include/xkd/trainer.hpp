#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xkd/objectives.hpp"

namespace xkd {

enum class LrSchedule { constant, linear };
enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const OptimizerConfig&) const = default;
};

/// Distillation objective family. `experiential` in TrainConfig toggles the
/// X-KD regularizer on top of each.
enum class Method {
  sequence,     // white-box SeqKD: y drawn from the teacher
  supervised,   // token-level forward KL on D_SFT
  generalized,  // on-policy/offline mixture with a beta-divergence
  blackbox,     // SeqKD on stored teacher responses
};

const char* to_string(Method m);
Method method_from_string(const std::string& s);
const char* to_string(LrSchedule s);
LrSchedule lr_schedule_from_string(const std::string& s);
const char* to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

struct TrainConfig {
  int steps = 2000;
  int batch_size = 8;
  double lr = 0.01;
  LrSchedule lr_schedule = LrSchedule::linear;
  int warmup_steps = 0;
  std::uint64_t seed = 0;
  XKDConfig xkd;
  GenConfig gen;
  OptimizerConfig optimizer;
  double max_grad_norm = 0.0;  // 0 disables clipping
  bool experiential = true;
  int workers = 1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct OptimizerState {
  std::vector<double> m, v;
  long t = 0;
};

/// Learning rate at 0-based step: linear ramp over warmup_steps, then either
/// constant or linear decay reaching zero at `steps`.
double scheduled_lr(const TrainConfig& cfg, int step);

void optimizer_step(std::span<double> params, std::span<const double> grad, OptimizerState& state,
                    const OptimizerConfig& cfg, double lr);

enum class Branch { offline, on_policy, teacher_sample };
const char* to_string(Branch b);

struct StepRecord {
  int step = 0;
  Branch branch = Branch::offline;
  LossBreakdown loss;  // minibatch mean
  double lr = 0.0;
};

struct TrainReport {
  std::vector<StepRecord> log;
  std::string checkpoint;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  std::size_t offline_draws = 0;
  std::size_t on_policy_draws = 0;
  std::size_t teacher_draws = 0;
};

struct TrainHooks {
  /// Sees each step's record with the minibatch-mean gradients before the update.
  std::function<void(const StepRecord&, std::span<const double> grad_theta, std::span<const double> grad_phi)>
      on_step;
  /// Called every `checkpoint_every` steps and once at the end with the
  /// current parameters; returns the path written. head is null for SFT.
  std::function<std::string(int step, const NeuralPolicy& student, const RewardPosterior* head)> checkpoint;
  int checkpoint_every = 0;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Maximum-likelihood fine-tuning on prompt-response pairs.
TrainReport sft(NeuralPolicy& policy, const Dataset& data, const TrainConfig& cfg, const TrainHooks& hooks = {});

/// White-box sequence-level (X-)KD: responses sampled from the teacher each step.
TrainReport train_sequence_xkd(const Policy& teacher, NeuralPolicy& student, RewardPosterior& head,
                               const Dataset& prompts, const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Supervised (X-)KD on fixed prompt-response pairs.
TrainReport train_supervised_xkd(const Policy& teacher, NeuralPolicy& student, RewardPosterior& head,
                                 const Dataset& sft_data, const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Generalized (X-)KD. Per step, u ~ U(0,1): if u <= alpha the minibatch is
/// student samples on D_prompt, otherwise pairs from D_SFT.
TrainReport train_generalized_xkd(const Policy& teacher, NeuralPolicy& student, RewardPosterior& head,
                                  const Dataset& prompts, const Dataset& sft_data, const TrainConfig& cfg,
                                  const TrainHooks& hooks = {});

/// Black-box sequence-level (X-)KD on a teacher-behavior dataset.
TrainReport train_blackbox_xkd(const Dataset& teacher_data, NeuralPolicy& student, RewardPosterior& head,
                               const TrainConfig& cfg, const TrainHooks& hooks = {});

struct DescentCheck {
  double initial = 0.0;  // mean total loss over the first window
  double final = 0.0;    // mean total loss over the last window
  bool descended() const { return final < initial; }
};

/// Windowed means of the logged total loss; the window is `fraction` of the
/// run, at least one step.
DescentCheck windowed_descent(const TrainReport& report, double fraction = 0.1);

/// Uniform prompt, then a uniform stored response for that prompt.
std::pair<std::size_t, std::size_t> pick_teacher_response(const Dataset& teacher_data, Rng& rng);

/// Independent streams derived from the run seed.
struct RngStreams {
  explicit RngStreams(std::uint64_t seed) : branch(seed, 1), data(seed, 2), sampling(seed, 3) {}
  Rng branch, data, sampling;
};

}  // namespace xkd
