#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "dpn/diffcore/params.hpp"

namespace dpn {

/// Central-difference derivative of `f` with respect to every scalar of
/// `point`. Parameters are restored after each probe.
inline Gradients numeric_gradients(const std::function<double(const ParamSet&)>& f, ParamSet& point,
                                   double eps) {
  Gradients out;
  for (auto& p : point.entries()) {
    auto data = p.value.mutable_data();
    std::vector<double> g(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double x = data[i];
      data[i] = x + eps;
      const double fp = f(point);
      data[i] = x - eps;
      const double fm = f(point);
      data[i] = x;
      g[i] = (fp - fm) / (2.0 * eps);
    }
    out.emplace(p.name, std::move(g));
  }
  return out;
}

/// max over scalars of |analytic - numeric| / max(1, |numeric|).
inline double max_relative_error(const Gradients& analytic, const Gradients& numeric) {
  double worst = 0.0;
  for (const auto& [name, num] : numeric) {
    auto it = analytic.find(name);
    for (std::size_t i = 0; i < num.size(); ++i) {
      const double a = it == analytic.end() ? 0.0 : it->second[i];
      worst = std::max(worst, std::abs(a - num[i]) / std::max(1.0, std::abs(num[i])));
    }
  }
  return worst;
}

/// Compares reverse-mode gradients of a scalar-valued graph builder against
/// central finite differences. Returns the max relative error.
inline double grad_check(const std::function<Value(const ParamSet&)>& fn, ParamSet& point,
                         double eps = 1e-5) {
  const Value root = fn(point);
  const Gradients analytic = backward(root, point);
  const auto scalar = [&](const ParamSet& ps) {
    NoGradGuard guard;
    return fn(ps).item();
  };
  return max_relative_error(analytic, numeric_gradients(scalar, point, eps));
}

}  // namespace dpn
