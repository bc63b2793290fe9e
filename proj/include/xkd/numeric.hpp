#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace xkd {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Raised when a loss or divergence hits a zero-probability token on the
/// support it is evaluated over. Never clamped.
class SupportViolation : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline bool is_support_violation(double v) { return std::isinf(v); }

inline double logsumexp(std::span<const double> x) {
  double m = -kInf;
  for (double v : x) m = std::max(m, v);
  if (m == -kInf) return -kInf;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

inline std::vector<double> softmax(std::span<const double> logits, double scale = 1.0) {
  std::vector<double> out(logits.size());
  double m = -kInf;
  for (double v : logits) m = std::max(m, scale * v);
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(scale * logits[i] - m);
    s += out[i];
  }
  for (double& v : out) v /= s;
  return out;
}

inline std::vector<double> log_softmax(std::span<const double> logits, double scale = 1.0) {
  std::vector<double> scaled(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = scale * logits[i];
  const double lse = logsumexp(scaled);
  for (double& v : scaled) v -= lse;
  return scaled;
}

/// Pull a gradient w.r.t. softmax outputs back to its inputs:
/// dL/dz_i = s_i * (g_i - <g, s>) for s = softmax(scale * z), times scale.
inline std::vector<double> softmax_backward(std::span<const double> probs, std::span<const double> grad_probs,
                                            double scale = 1.0) {
  double dot = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * grad_probs[i];
  std::vector<double> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = scale * probs[i] * (grad_probs[i] - dot);
  return out;
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline double l2_norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

}  // namespace xkd
