#pragma once

#include <cmath>
#include <vector>

#include "dpn/diffcore/params.hpp"
#include "dpn/train/rollout.hpp"

namespace dpn::train {

/// Discounted n-step targets per worker row:
/// R_t = r_t + gamma * R_{t+1} * (1 - done_t), seeded with the bootstrap value.
/// `rewards`/`dones` are worker-major [workers x n_step].
inline std::vector<double> n_step_returns(std::span<const double> rewards, const std::vector<bool>& dones,
                                          std::span<const double> bootstrap, double gamma) {
  const std::size_t workers = bootstrap.size();
  if (workers == 0 || rewards.size() % workers != 0 || dones.size() != rewards.size()) {
    throw ContractViolation("n_step_returns: misaligned inputs");
  }
  const std::size_t n = rewards.size() / workers;
  std::vector<double> out(rewards.size());
  for (std::size_t w = 0; w < workers; ++w) {
    double R = bootstrap[w];
    for (std::size_t t = n; t-- > 0;) {
      const std::size_t i = w * n + t;
      R = rewards[i] + (dones[i] ? 0.0 : gamma * R);
      out[i] = R;
    }
  }
  return out;
}

inline std::vector<double> batch_returns(const RolloutBatch& b, double gamma) {
  std::vector<double> rewards;
  std::vector<bool> dones;
  for (const auto& s : b.steps) {
    rewards.push_back(s.reward);
    dones.push_back(s.done);
  }
  return n_step_returns(rewards, dones, b.bootstrap, gamma);
}

/// Undiscounted utility-to-go G_tau = sum_{k >= tau} U_k within one plan.
inline std::vector<double> utility_to_go(const planner::PlanTrace& trace) {
  std::vector<double> g(trace.steps.size());
  double acc = 0.0;
  for (std::size_t i = trace.steps.size(); i-- > 0;) {
    acc += trace.steps[i].utility;
    g[i] = acc;
  }
  return g;
}

struct LossBreakdown {
  double policy = 0.0;
  double value = 0.0;
  double inner = 0.0;
  double grounding = 0.0;
  double entropy_outer = 0.0;
  double entropy_inner = 0.0;
  double total = 0.0;

  static double compose(double policy, double value, double inner, double grounding, double h_outer,
                        double h_inner, double lambda, double beta) {
    double t = policy + value + inner;
    if (lambda != 0.0) t += lambda * grounding;
    return t - beta * (h_outer + h_inner);
  }
};

/// Loss graphs for one batch.
///
/// `outer_objective` = L_O + lambda L_Z - beta H_outer, differentiated with
/// respect to every parameter. `inner_objective` = L_I - beta H_inner,
/// differentiated with scope barriers active so only inner-agent parameters
/// receive gradient.
struct LossGraph {
  LossBreakdown breakdown;
  Value policy, value, inner, grounding, entropy_outer, entropy_inner;
  Value outer_objective;
  Value inner_objective;
};

namespace detail {

inline Value mean_of(const std::vector<Value>& terms) {
  if (terms.empty()) return Value::scalar(0.0);
  return scale(add_n(terms), 1.0 / static_cast<double>(terms.size()));
}

}  // namespace detail

/// Rebuilds the batch's forward passes with gradient tracking, replaying the
/// recorded noise so every sampled choice matches collection, and assembles
/// the loss terms.
///
/// Stop-gradient quantities come from the batch: the advantage uses the
/// collection-time value estimate and the inner agent's returns use the
/// recorded planning utilities.
inline LossGraph compute_losses(const RolloutBatch& b, const model::Model& m, const TrainConfig& c) {
  const auto returns = batch_returns(b, c.gamma);
  const auto opt = plan_options(c);
  const bool planning = m.config().planning;

  std::vector<ForwardStep> fwd;
  fwd.reserve(b.steps.size());
  for (const auto& s : b.steps) {
    planner::NoiseTape tape(s.noise);
    fwd.push_back(forward_step(m, s.obs, opt, tape));
  }

  std::vector<Value> policy_terms, value_terms, entropy_outer_terms, inner_terms, entropy_state_terms,
      entropy_action_terms, grounding_terms;
  for (int w = 0; w < b.workers; ++w) {
    for (int t = 0; t < b.n_step; ++t) {
      const std::size_t i = static_cast<std::size_t>(w * b.n_step + t);
      const Transition& s = b.steps[i];
      const ForwardStep& f = fwd[i];
      const Value lp_all = log_softmax(f.logits);
      const double advantage = returns[i] - s.value;
      policy_terms.push_back(scale(pick(lp_all, static_cast<std::size_t>(s.action)), -advantage));
      const Value err = sub(Value::scalar(returns[i]), f.value);
      value_terms.push_back(mul(err, err));
      entropy_outer_terms.push_back(entropy_from_logits(f.logits));

      if (!planning) continue;
      const auto& p = *f.plan;
      const auto G = utility_to_go(s.trace);
      std::size_t state_k = 0;
      for (std::size_t tau = 0; tau < p.action_logits.size(); ++tau) {
        Value lp = pick(log_softmax(p.action_logits[tau]), p.action_index[tau]);
        entropy_action_terms.push_back(entropy_from_logits(p.action_logits[tau]));
        if (opt.mode == planner::BranchingMode::all) {
          const Value& sl = p.state_logits[state_k];
          lp = add(lp, pick(log_softmax(sl), p.state_index[state_k]));
          entropy_state_terms.push_back(entropy_from_logits(sl));
          ++state_k;
        }
        inner_terms.push_back(scale(lp, -G[tau]));
      }

      const Value predicted = m.transition(f.z, m.one_hot(static_cast<std::size_t>(s.action)));
      Value target;
      if (t + 1 < b.n_step && !s.done) {
        target = fwd[i + 1].z;
      } else {
        target = m.encode(s.next_obs);
      }
      if (c.stop_grounding_target) target = target.detach();
      grounding_terms.push_back(huber(predicted, target, 1.0));
    }
  }

  LossGraph g;
  g.policy = detail::mean_of(policy_terms);
  g.value = detail::mean_of(value_terms);
  g.entropy_outer = detail::mean_of(entropy_outer_terms);
  g.inner = detail::mean_of(inner_terms);
  g.entropy_inner = add(detail::mean_of(entropy_state_terms), detail::mean_of(entropy_action_terms));
  g.grounding = detail::mean_of(grounding_terms);

  std::vector<Value> outer{g.policy, g.value, scale(g.entropy_outer, -c.beta)};
  if (planning && c.lambda != 0.0) outer.push_back(scale(g.grounding, c.lambda));
  g.outer_objective = add_n(outer);
  g.inner_objective = add(g.inner, scale(g.entropy_inner, -c.beta));

  auto& lb = g.breakdown;
  lb.policy = g.policy.item();
  lb.value = g.value.item();
  lb.inner = g.inner.item();
  lb.grounding = g.grounding.item();
  lb.entropy_outer = g.entropy_outer.item();
  lb.entropy_inner = g.entropy_inner.item();
  lb.total = LossBreakdown::compose(lb.policy, lb.value, lb.inner, lb.grounding, lb.entropy_outer, lb.entropy_inner,
                                    planning ? c.lambda : 0.0, c.beta);
  return g;
}

/// Gradient of the combined objective with per-term scoping: the outer
/// objective reaches all parameters, the inner objective only the inner
/// agent's.
inline Gradients scoped_gradients(const LossGraph& g, const ParamSet& params) {
  Gradients full = backward(g.outer_objective, params);
  accumulate(full, backward(g.inner_objective, params, {.stop_at_barriers = true}));
  return full;
}

}  // namespace dpn::train
