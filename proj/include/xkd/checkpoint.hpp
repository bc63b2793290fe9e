#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>

#include "xkd/policy.hpp"
#include "xkd/reward_head.hpp"

namespace xkd {

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(const std::string& path, std::size_t line, const std::string& what);
};

/// A policy checkpoint with an optional reward-head section. BOS/EOS ids are
/// not stored; the loader takes them from the caller's vocab and checks size.
struct Checkpoint {
  std::variant<NeuralPolicy, TabularPolicy> policy;
  std::optional<RewardPosterior> head;
};

std::string format_checkpoint(const NeuralPolicy& policy, const RewardPosterior* head = nullptr);
std::string format_checkpoint(const TabularPolicy& policy, const RewardPosterior* head = nullptr);
Checkpoint parse_checkpoint(const std::string& text, const Vocab& v, const std::string& origin = "<memory>");

void save_checkpoint(const std::filesystem::path& path, const NeuralPolicy& policy,
                     const RewardPosterior* head = nullptr);
void save_checkpoint(const std::filesystem::path& path, const TabularPolicy& policy,
                     const RewardPosterior* head = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path, const Vocab& v);

}  // namespace xkd
