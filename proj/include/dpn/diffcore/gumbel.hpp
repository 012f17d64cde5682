#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "dpn/diffcore/ops.hpp"
#include "dpn/rng.hpp"

namespace dpn {

struct GumbelSample {
  Value weights;      // one-hot (hard) or relaxed sample
  std::size_t index;  // argmax of the relaxed sample
};

/// Gumbel-Softmax with caller-supplied Gumbel(0,1) noise.
///
/// The relaxed sample is softmax((logits + noise) / temperature). With `hard`
/// the forward value is the one-hot argmax and the backward pass uses the
/// relaxed sample's Jacobian (straight-through).
inline GumbelSample gumbel_softmax(const Value& logits, std::span<const double> noise,
                                   double temperature, bool hard) {
  const std::size_t k = logits.size();
  if (k < 2) throw ContractViolation("gumbel_softmax: need at least two categories");
  if (!(temperature > 0)) throw ContractViolation("gumbel_softmax: temperature must be positive");
  if (noise.size() != k) throw ContractViolation("gumbel_softmax: noise size mismatch");
  for (double x : logits.data()) {
    if (!std::isfinite(x)) throw InvalidInput("gumbel_softmax: non-finite logit");
  }
  std::vector<double> perturbed(k);
  for (std::size_t i = 0; i < k; ++i) perturbed[i] = (logits[i] + noise[i]) / temperature;
  std::vector<double> soft = softmax_values(perturbed);
  std::size_t index = 0;
  for (std::size_t i = 1; i < k; ++i) {
    if (perturbed[i] > perturbed[index]) index = i;
  }
  std::vector<double> out = soft;
  if (hard) {
    out.assign(k, 0.0);
    out[index] = 1.0;
  }
  Value w = Value::make(Shape{k}, std::move(out), {logits},
                        [soft = std::move(soft), temperature](detail::Node& self) {
    if (auto* g = detail::grad_of(self, 0)) {
      double inner = 0.0;
      for (std::size_t i = 0; i < soft.size(); ++i) inner += self.grad[i] * soft[i];
      for (std::size_t i = 0; i < soft.size(); ++i) {
        (*g)[i] += soft[i] * (self.grad[i] - inner) / temperature;
      }
    }
  });
  return {std::move(w), index};
}

inline GumbelSample gumbel_softmax(const Value& logits, double temperature, bool hard, Rng& rng) {
  std::vector<double> noise(logits.size());
  for (double& g : noise) g = rng.gumbel();
  return gumbel_softmax(logits, noise, temperature, hard);
}

}  // namespace dpn
