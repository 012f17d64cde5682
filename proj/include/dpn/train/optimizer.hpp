#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dpn/diffcore/params.hpp"

namespace dpn::train {

struct RmsPropConfig {
  double lr = 7e-4;
  double decay = 0.99;
  double eps = 1e-5;
  double clip_norm = 0.5;  // <= 0 disables clipping
};

/// Per-parameter running mean of squared gradients.
struct RmsPropState {
  std::map<std::string, std::vector<double>> square_avg;
  std::uint64_t updates = 0;
  std::uint64_t skipped = 0;
};

inline double global_norm(const Gradients& g) {
  double s = 0.0;
  for (const auto& [name, buf] : g) {
    for (double x : buf) s += x * x;
  }
  return std::sqrt(s);
}

inline bool all_finite(const Gradients& g) {
  for (const auto& [name, buf] : g) {
    for (double x : buf) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

/// Rescales `g` in place so its global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_global_norm(Gradients& g, double max_norm) {
  const double norm = global_norm(g);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& [name, buf] : g) {
      for (double& x : buf) x *= f;
    }
  }
  return norm;
}

enum class UpdateStatus { applied, skipped_non_finite };

/// sq <- decay * sq + (1 - decay) * g^2;  p <- p - lr * g / (sqrt(sq) + eps).
/// Non-finite gradients leave parameters and state untouched.
inline UpdateStatus apply_update(ParamSet& params, Gradients grads, RmsPropState& state, const RmsPropConfig& cfg) {
  if (!all_finite(grads)) {
    ++state.skipped;
    return UpdateStatus::skipped_non_finite;
  }
  clip_global_norm(grads, cfg.clip_norm);
  for (auto& p : params.entries()) {
    auto it = grads.find(p.name);
    auto data = p.value.mutable_data();
    auto& sq = state.square_avg[p.name];
    if (sq.size() != data.size()) sq.assign(data.size(), 0.0);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = it == grads.end() ? 0.0 : it->second[i];
      sq[i] = cfg.decay * sq[i] + (1.0 - cfg.decay) * g * g;
      data[i] -= cfg.lr * g / (std::sqrt(sq[i]) + cfg.eps);
    }
  }
  ++state.updates;
  return UpdateStatus::applied;
}

}  // namespace dpn::train
