#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "dpn/planner/plan.hpp"

namespace dpn::planner {

enum class CountMethod { dpn, exhaustive_tree, fixed_rollouts };

/// Transition-model invocations needed per acting step.
///   dpn             -> T
///   exhaustive_tree -> (A^(d+1) - 1) / (A - 1) - 1   (every action at every node)
///   fixed_rollouts  -> A * L                          (one rollout per first action)
inline std::uint64_t transition_count(CountMethod method, std::uint64_t actions, std::uint64_t depth,
                                      std::optional<std::uint64_t> rollout_length = std::nullopt) {
  if (actions < 2) throw ContractViolation("transition_count: need at least two actions");
  if (depth < 1) throw ContractViolation("transition_count: depth must be at least 1");
  switch (method) {
    case CountMethod::dpn: return depth;
    case CountMethod::exhaustive_tree: {
      std::uint64_t nodes = 1, level = 1;
      for (std::uint64_t d = 0; d < depth; ++d) {
        level *= actions;
        nodes += level;
      }
      return nodes - 1;
    }
    case CountMethod::fixed_rollouts:
      if (!rollout_length) throw ContractViolation("transition_count: fixed_rollouts needs a rollout length");
      return actions * *rollout_length;
  }
  return 0;
}

enum class Pattern { breadth_first, depth_first, mixed };

inline std::string_view pattern_name(Pattern p) {
  switch (p) {
    case Pattern::breadth_first: return "breadth_first";
    case Pattern::depth_first: return "depth_first";
    case Pattern::mixed: return "mixed";
  }
  return "mixed";
}

/// Labels a plan by its anchor selections. The first selection is ignored:
/// at tau = 1 all three anchors are z0. Root after that is a depth-1 tree
/// around the agent; current after that is a forward-only chain.
inline Pattern classify_pattern(const PlanTrace& trace) {
  if (trace.steps.size() < 2) throw ContractViolation("classify_pattern: needs at least two planning steps");
  bool all_root = true, all_current = true;
  for (std::size_t i = 1; i < trace.steps.size(); ++i) {
    all_root = all_root && trace.steps[i].selection == Selection::root;
    all_current = all_current && trace.steps[i].selection == Selection::current;
  }
  if (all_root) return Pattern::breadth_first;
  if (all_current) return Pattern::depth_first;
  return Pattern::mixed;
}

/// True when every selection obeys the trace's branching mode.
inline bool satisfies_mode(const PlanTrace& trace) {
  for (const auto& s : trace.steps) {
    if (trace.mode == BranchingMode::current && s.selection != Selection::current) return false;
    if (trace.mode == BranchingMode::reset && s.selection != Selection::root) return false;
  }
  return true;
}

}  // namespace dpn::planner
