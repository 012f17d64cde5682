#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "dpn/model/dpn_model.hpp"
#include "dpn/rng.hpp"

namespace dpn::planner {

enum class Selection { previous = 0, current = 1, root = 2 };

inline std::string_view selection_name(Selection s) {
  switch (s) {
    case Selection::previous: return "previous";
    case Selection::current: return "current";
    case Selection::root: return "root";
  }
  return "current";
}

inline Selection parse_selection(std::string_view s) {
  if (s == "previous") return Selection::previous;
  if (s == "current") return Selection::current;
  if (s == "root") return Selection::root;
  throw InvalidInput("unknown selection '" + std::string(s) + "'");
}

/// Constraint on which anchor the inner agent may expand.
enum class BranchingMode { all, current, reset };

inline std::string_view mode_name(BranchingMode m) {
  switch (m) {
    case BranchingMode::all: return "all";
    case BranchingMode::current: return "current";
    case BranchingMode::reset: return "reset";
  }
  return "all";
}

inline BranchingMode parse_mode(std::string_view s) {
  if (s == "all") return BranchingMode::all;
  if (s == "current") return BranchingMode::current;
  if (s == "reset") return BranchingMode::reset;
  throw InvalidInput("unknown branching mode '" + std::string(s) + "'");
}

struct PlanStepRecord {
  int tau = 0;
  Selection selection = Selection::current;
  int action = 0;
  double utility = 0.0;
  double value_term = 0.0;
  double distance_term = 0.0;
  bool operator==(const PlanStepRecord&) const = default;
};

struct PlanTrace {
  std::string initial_state;  // free-form reference to the raw state planned from
  int T = 0;
  BranchingMode mode = BranchingMode::all;
  std::vector<PlanStepRecord> steps;
  std::vector<double> final_hidden;

  bool complete() const { return T >= 1 && static_cast<int>(steps.size()) == T; }
  bool operator==(const PlanTrace&) const = default;
};

/// Sequence of uniform draws consumed by sampling. In recording mode draws
/// come from a generator and are appended; a tape built from stored draws
/// replays them exactly, which lets a batch be re-run with gradients later.
class NoiseTape {
 public:
  explicit NoiseTape(Rng& rng) : rng_(&rng) {}
  explicit NoiseTape(std::vector<double> draws) : draws_(std::move(draws)) {}

  double uniform() {
    if (cursor_ < draws_.size()) return draws_[cursor_++];
    if (!rng_) throw ContractViolation("noise tape exhausted during replay");
    draws_.push_back(rng_->uniform());
    return draws_[cursor_++];
  }

  std::vector<double> gumbel(std::size_t k) {
    std::vector<double> g(k);
    for (double& x : g) x = -std::log(-std::log(uniform()));
    return g;
  }

  const std::vector<double>& draws() const { return draws_; }
  std::size_t consumed() const { return cursor_; }

 private:
  Rng* rng_ = nullptr;
  std::vector<double> draws_;
  std::size_t cursor_ = 0;
};

struct PlanOptions {
  int T = 3;
  BranchingMode mode = BranchingMode::all;
  model::Metric metric = model::Metric::l1;
  bool record_anchors = false;  // keep per-step triplet snapshots for inspection
};

struct AnchorSnapshot {
  std::vector<double> previous, current, root, source;
};

struct PlanResult {
  Value final_hidden;
  PlanTrace trace;
  std::vector<Value> state_logits;   // one per sampled selection (empty when forced)
  std::vector<Value> action_logits;  // one per step
  std::vector<std::size_t> state_index;
  std::vector<std::size_t> action_index;
  std::vector<AnchorSnapshot> anchors;
};

/// Runs T planning steps from z0. Each step: inner-agent update, anchor
/// selection (sampled, or forced by the branching mode), simulated action,
/// one transition, utility, then the triplet shift
/// previous <- current, root <- z0, current <- z_next.
inline PlanResult plan(const model::Model& m, const model::Embedded& z0, const PlanOptions& opt, NoiseTape& noise) {
  if (opt.T < 1) throw ContractViolation("plan: T must be at least 1");
  const auto& cfg = m.config();
  PlanResult out;
  out.trace.T = opt.T;
  out.trace.mode = opt.mode;

  model::Triplet t{z0, z0, z0};
  Value h_inner = Value::zeros({cfg.inner_hidden});
  Value h_current = m.outer_hidden(z0);

  for (int tau = 1; tau <= opt.T; ++tau) {
    h_inner = m.ia_update(h_inner, t, static_cast<double>(tau) / opt.T, h_current);

    Selection sel;
    model::Embedded z_star;
    if (opt.mode == BranchingMode::all) {
      const auto g = noise.gumbel(3);
      auto s = m.select_state(h_inner, t, g);
      sel = static_cast<Selection>(s.weight.index);
      z_star = s.z_star;
      out.state_logits.push_back(s.logits);
      out.state_index.push_back(s.weight.index);
    } else {
      sel = opt.mode == BranchingMode::current ? Selection::current : Selection::root;
      z_star = sel == Selection::current ? t.current : t.root;
    }

    const auto ga = noise.gumbel(cfg.actions);
    auto a = m.select_action(z_star, h_inner, ga);
    out.action_logits.push_back(a.logits);
    out.action_index.push_back(a.action.index);

    const model::Embedded z_next = m.transition(z_star, a.action.weights, &t.current);
    const Value h_next = m.outer_hidden(z_next);
    const double v_next = m.value_from_hidden(h_next).item();
    const auto u = model::utility(h_next.data(), h_current.data(), v_next, opt.metric);

    if (opt.record_anchors) {
      out.anchors.push_back({{t.previous.data().begin(), t.previous.data().end()},
                             {t.current.data().begin(), t.current.data().end()},
                             {t.root.data().begin(), t.root.data().end()},
                             {z_star.data().begin(), z_star.data().end()}});
    }
    out.trace.steps.push_back({tau, sel, static_cast<int>(a.action.index), u.total, u.value_term, u.distance_term});

    t = {t.current, z_next, z0};
    h_current = h_next;
  }
  out.final_hidden = h_inner;
  out.trace.final_hidden.assign(h_inner.data().begin(), h_inner.data().end());
  return out;
}

/// Replays a finished trace's choices against `m` and recomputes each step's
/// utility. Used to check recorded utilities.
inline std::vector<model::Utility> recompute_utilities(const model::Model& m, const model::Embedded& z0,
                                                       const PlanTrace& trace, model::Metric metric) {
  NoGradGuard guard;
  std::vector<model::Utility> out;
  model::Triplet t{z0, z0, z0};
  Value h_current = m.outer_hidden(z0);
  for (const auto& s : trace.steps) {
    const model::Embedded& z_star =
        s.selection == Selection::previous ? t.previous : (s.selection == Selection::current ? t.current : t.root);
    const model::Embedded z_next = m.transition(z_star, m.one_hot(static_cast<std::size_t>(s.action)), &t.current);
    const Value h_next = m.outer_hidden(z_next);
    out.push_back(model::utility(h_next.data(), h_current.data(), m.value_from_hidden(h_next).item(), metric));
    t = {t.current, z_next, z0};
    h_current = h_next;
  }
  return out;
}

}  // namespace dpn::planner
