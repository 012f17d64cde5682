#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpn/envs/grid.hpp"

namespace dpn::envs {

/// Regression fixture: a seeded layout driven by a seeded random action
/// sequence until termination.
struct GoldenTrace {
  EnvKind kind = EnvKind::gridworld;
  std::uint64_t seed = 0;
  std::string layout;  // render() of the initial state
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<bool> done;
};

inline GoldenTrace record_golden(const EnvConfig& config, std::uint64_t seed) {
  GoldenTrace g{config.kind, seed, {}, {}, {}, {}};
  Environment env(config);
  g.layout = render(env.reset(seed));
  Rng rng(seed, 0x601d);
  while (!env.state().done) {
    const int a = static_cast<int>(rng.below(kActionCount));
    const StepResult r = env.step(static_cast<Action>(a));
    g.actions.push_back(a);
    g.rewards.push_back(r.reward);
    g.done.push_back(r.done);
  }
  return g;
}

/// Replays the recorded actions and checks rewards and terminal flags match.
inline bool replay_matches(const EnvConfig& config, const GoldenTrace& g) {
  Environment env(config);
  if (render(env.reset(g.seed)) != g.layout) return false;
  for (std::size_t i = 0; i < g.actions.size(); ++i) {
    if (env.state().done) return false;
    const StepResult r = env.step(static_cast<Action>(g.actions[i]));
    if (r.reward != g.rewards[i] || r.done != g.done[i]) return false;
  }
  return env.state().done;
}

inline std::string to_line(const GoldenTrace& g) {
  nlohmann::ordered_json j;
  j["env"] = std::string(kind_name(g.kind));
  j["seed"] = g.seed;
  j["layout"] = g.layout;
  j["actions"] = g.actions;
  j["rewards"] = g.rewards;
  j["done"] = g.done;
  return j.dump();
}

inline GoldenTrace golden_from_line(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  GoldenTrace g;
  g.kind = parse_kind(j.at("env").get<std::string>());
  g.seed = j.at("seed").get<std::uint64_t>();
  g.layout = j.at("layout").get<std::string>();
  g.actions = j.at("actions").get<std::vector<int>>();
  g.rewards = j.at("rewards").get<std::vector<double>>();
  g.done = j.at("done").get<std::vector<bool>>();
  return g;
}

}  // namespace dpn::envs
