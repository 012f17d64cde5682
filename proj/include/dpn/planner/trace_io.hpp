#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "dpn/planner/plan.hpp"

namespace dpn::planner {

/// One JSON object per line:
///   {"ref": str, "T": int, "mode": "all"|"current"|"reset",
///    "steps": [{"tau", "selection", "action", "utility", "value", "distance"}...],
///    "final_hidden": [float...]}
/// Numbers are written in shortest round-trip form, so import(export(t)) == t.
inline std::string export_trace(const PlanTrace& trace) {
  if (!trace.complete()) throw ContractViolation("export_trace: trace is incomplete");
  nlohmann::ordered_json j;
  j["ref"] = trace.initial_state;
  j["T"] = trace.T;
  j["mode"] = std::string(mode_name(trace.mode));
  auto steps = nlohmann::ordered_json::array();
  for (const auto& s : trace.steps) {
    nlohmann::ordered_json js;
    js["tau"] = s.tau;
    js["selection"] = std::string(selection_name(s.selection));
    js["action"] = s.action;
    js["utility"] = s.utility;
    js["value"] = s.value_term;
    js["distance"] = s.distance_term;
    steps.push_back(std::move(js));
  }
  j["steps"] = std::move(steps);
  j["final_hidden"] = trace.final_hidden;
  return j.dump();
}

/// Parses one exported line. Throws InvalidInput on malformed records.
inline PlanTrace import_trace(const std::string& line) {
  PlanTrace t;
  try {
    const auto j = nlohmann::json::parse(line);
    t.initial_state = j.at("ref").get<std::string>();
    t.T = j.at("T").get<int>();
    t.mode = parse_mode(j.at("mode").get<std::string>());
    for (const auto& js : j.at("steps")) {
      PlanStepRecord s;
      s.tau = js.at("tau").get<int>();
      s.selection = parse_selection(js.at("selection").get<std::string>());
      s.action = js.at("action").get<int>();
      s.utility = js.at("utility").get<double>();
      s.value_term = js.at("value").get<double>();
      s.distance_term = js.at("distance").get<double>();
      t.steps.push_back(s);
    }
    t.final_hidden = j.at("final_hidden").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed trace record: ") + e.what());
  }
  if (!t.complete()) throw InvalidInput("malformed trace record: step count does not match T");
  return t;
}

}  // namespace dpn::planner
