#pragma once

#include <cstdint>
#include <vector>

#include "dpn/envs/grid.hpp"
#include "dpn/rng.hpp"
#include "dpn/train/trainer.hpp"

namespace dpn::baselines {

/// The non-planning actor-critic: same encoder, outer hidden state, heads,
/// optimizer and loss bookkeeping as the DPN agent, with no inner agent,
/// no transition model and no grounding term.
inline train::TrainConfig a2c_config(train::TrainConfig c) {
  c.agent = train::AgentKind::a2c;
  c.T = 0;
  return c;
}

inline train::TrainResult train_a2c(const train::TrainConfig& c, const train::TrainHooks& hooks = {}) {
  return train::train(a2c_config(c), hooks);
}

/// Uniform-random policy. Episode e uses layout seed derive_seed(seed, 0, e)
/// and actions from Rng(seed, 0xbad). Returns each episode's total reward.
inline std::vector<double> random_policy_rewards(const envs::EnvConfig& env_config, std::uint64_t seed,
                                                 int episodes) {
  std::vector<double> out;
  Rng rng(seed, 0xbad);
  envs::Environment env(env_config);
  for (int e = 0; e < episodes; ++e) {
    env.reset(derive_seed(seed, 0, static_cast<std::uint64_t>(e)));
    double total = 0.0;
    while (!env.state().done) total += env.step(static_cast<envs::Action>(rng.below(envs::kActionCount))).reward;
    out.push_back(total);
  }
  return out;
}

inline double random_policy_mean(const envs::EnvConfig& env_config, std::uint64_t seed, int episodes) {
  const auto r = random_policy_rewards(env_config, seed, episodes);
  return train::tail_mean(r, r.size());
}

}  // namespace dpn::baselines
