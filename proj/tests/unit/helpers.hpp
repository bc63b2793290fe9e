#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "xkd/objectives.hpp"

namespace xkd::testing {

/// Central differences of f over every coordinate of params (restored after).
inline std::vector<double> numeric_grad(std::span<double> params, const std::function<double()>& f, double h = 1e-5) {
  std::vector<double> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = f();
    params[i] = keep - h;
    const double down = f();
    params[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Largest componentwise |a - n| / max(|a|, |n|, floor). The floor keeps
/// coordinates whose true derivative is zero from dividing noise by noise.
inline double max_rel_error(std::span<const double> analytic, std::span<const double> numeric, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
  }
  return worst;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

inline Prompt random_prompt(const Vocab& v, int len, Rng& rng) {
  Prompt x;
  for (int i = 0; i < len; ++i) x.tokens.push_back(2 + static_cast<TokenId>(rng.index(static_cast<std::size_t>(v.size - 2))));
  return x;
}

/// A sequence with up to max_len generated tokens, EOS allowed only last.
inline Sequence random_sequence(const Vocab& v, int max_len, Rng& rng) {
  Sequence y{{v.bos_id}};
  const int n = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(max_len)));
  for (int i = 0; i < n; ++i) {
    const bool last = i + 1 == n;
    TokenId t;
    do {
      t = static_cast<TokenId>(rng.index(static_cast<std::size_t>(v.size)));
    } while (t == v.bos_id || (!last && t == v.eos_id));
    y.tokens.push_back(t);
  }
  return y;
}

}  // namespace xkd::testing
