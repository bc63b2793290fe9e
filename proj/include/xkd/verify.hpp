#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace xkd {

struct CheckResult {
  std::string name;
  double residual = 0.0;
  double tolerance = 0.0;
  bool pass() const { return residual < tolerance; }
};

/// Identity checks on fresh random policies: sequence-loss reformulations,
/// the Bellman relation on a chain MDP, the loss decomposition, and
/// enumeration mass. Each entry reports the worst residual over `instances`.
std::vector<CheckResult> run_verify_suite(std::uint64_t seed, int instances);

}  // namespace xkd
