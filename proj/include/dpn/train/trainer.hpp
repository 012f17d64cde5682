#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpn/train/checkpoint.hpp"
#include "dpn/train/losses.hpp"
#include "dpn/train/optimizer.hpp"
#include "dpn/train/rollout.hpp"

namespace dpn::train {

/// Raised when training hits a non-finite loss; a checkpoint is written first.
class NumericFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One metrics line. Keys, in order:
///   env, agent, iteration, env_steps, episodes, mean_reward_1000,
///   mean_reward_100, loss_policy, loss_value, loss_inner, loss_grounding,
///   entropy_outer, entropy_inner, loss_total, grad_norm, skipped_updates,
///   wall_clock_s, episode_rewards (rewards of episodes finished since the
///   previous record, in completion order).
struct MetricsRecord {
  std::string env;
  std::string agent;
  std::int64_t iteration = 0;
  std::int64_t env_steps = 0;
  std::int64_t episodes = 0;
  double mean_reward_1000 = 0.0;
  double mean_reward_100 = 0.0;
  LossBreakdown loss;
  double grad_norm = 0.0;
  std::uint64_t skipped_updates = 0;
  double wall_clock_s = 0.0;
  std::vector<double> episode_rewards;
};

inline std::string to_json_line(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["env"] = r.env;
  j["agent"] = r.agent;
  j["iteration"] = r.iteration;
  j["env_steps"] = r.env_steps;
  j["episodes"] = r.episodes;
  j["mean_reward_1000"] = r.mean_reward_1000;
  j["mean_reward_100"] = r.mean_reward_100;
  j["loss_policy"] = r.loss.policy;
  j["loss_value"] = r.loss.value;
  j["loss_inner"] = r.loss.inner;
  j["loss_grounding"] = r.loss.grounding;
  j["entropy_outer"] = r.loss.entropy_outer;
  j["entropy_inner"] = r.loss.entropy_inner;
  j["loss_total"] = r.loss.total;
  j["grad_norm"] = r.grad_norm;
  j["skipped_updates"] = r.skipped_updates;
  j["wall_clock_s"] = r.wall_clock_s;
  j["episode_rewards"] = r.episode_rewards;
  return j.dump();
}

inline MetricsRecord metrics_from_json_line(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  MetricsRecord r;
  r.env = j.at("env").get<std::string>();
  r.agent = j.at("agent").get<std::string>();
  r.iteration = j.at("iteration").get<std::int64_t>();
  r.env_steps = j.at("env_steps").get<std::int64_t>();
  r.episodes = j.at("episodes").get<std::int64_t>();
  r.mean_reward_1000 = j.at("mean_reward_1000").get<double>();
  r.mean_reward_100 = j.at("mean_reward_100").get<double>();
  r.loss.policy = j.at("loss_policy").get<double>();
  r.loss.value = j.at("loss_value").get<double>();
  r.loss.inner = j.at("loss_inner").get<double>();
  r.loss.grounding = j.at("loss_grounding").get<double>();
  r.loss.entropy_outer = j.at("entropy_outer").get<double>();
  r.loss.entropy_inner = j.at("entropy_inner").get<double>();
  r.loss.total = j.at("loss_total").get<double>();
  r.grad_norm = j.at("grad_norm").get<double>();
  r.skipped_updates = j.at("skipped_updates").get<std::uint64_t>();
  r.wall_clock_s = j.at("wall_clock_s").get<double>();
  r.episode_rewards = j.at("episode_rewards").get<std::vector<double>>();
  return r;
}

inline double tail_mean(const std::vector<double>& xs, std::size_t window) {
  if (xs.empty()) return 0.0;
  const std::size_t n = std::min(window, xs.size());
  double s = 0.0;
  for (std::size_t i = xs.size() - n; i < xs.size(); ++i) s += xs[i];
  return s / static_cast<double>(n);
}

struct TrainHooks {
  std::function<void(const MetricsRecord&)> on_metrics;
  std::function<void(const std::string&)> on_incident;  // skipped updates and similar
  std::string checkpoint_path;                          // empty: no checkpoints
  const Checkpoint* resume = nullptr;
};

struct TrainResult {
  model::Model model;
  RmsPropState optimizer;
  std::int64_t env_steps = 0;
  std::int64_t iterations = 0;
  std::int64_t episodes = 0;
  std::vector<double> episode_rewards;
  std::vector<MetricsRecord> records;
};

inline Checkpoint make_checkpoint(const TrainConfig& c, const model::Model& m, const RmsPropState& opt,
                                  std::int64_t env_steps, std::int64_t iterations, std::int64_t episodes) {
  Checkpoint ck;
  ck.manifest = to_text(c);
  ck.env_steps = static_cast<std::uint64_t>(env_steps);
  ck.iterations = static_cast<std::uint64_t>(iterations);
  ck.episodes = static_cast<std::uint64_t>(episodes);
  ck.params = m.params();
  ck.optimizer = opt;
  return ck;
}

/// Synchronous advantage actor-critic over `config.workers` environments:
/// collect -> losses -> scoped gradients -> RMSprop, until total_steps.
/// The a2c agent runs the same loop with no planning and no grounding term.
inline TrainResult train(const TrainConfig& config, const TrainHooks& hooks = {}) {
  config.validate();
  const auto mc = config.model_config();
  TrainResult res{model::Model::init(mc, config.seed), {}, 0, 0, 0, {}, {}};
  std::uint64_t episode_base = 0;
  if (hooks.resume) {
    res.model = model_from_checkpoint(*hooks.resume, mc);
    res.optimizer = hooks.resume->optimizer;
    res.env_steps = static_cast<std::int64_t>(hooks.resume->env_steps);
    res.iterations = static_cast<std::int64_t>(hooks.resume->iterations);
    res.episodes = static_cast<std::int64_t>(hooks.resume->episodes);
    episode_base = hooks.resume->episodes;
  }
  auto workers = make_workers(config, static_cast<std::uint64_t>(res.iterations));
  for (auto& w : workers) {
    w.episode = episode_base;
    w.start_episode();
  }
  const RmsPropConfig rms{config.lr, config.rms_decay, config.rms_eps, config.clip_norm};
  const auto t0 = std::chrono::steady_clock::now();
  auto save = [&] {
    if (hooks.checkpoint_path.empty()) return;
    save_checkpoint(hooks.checkpoint_path,
                    make_checkpoint(config, res.model, res.optimizer, res.env_steps, res.iterations, res.episodes));
  };

  std::vector<double> pending;
  while (res.env_steps < config.total_steps) {
    RolloutBatch batch = collect_rollouts(workers, res.model, config);
    LossGraph graph = compute_losses(batch, res.model, config);
    if (!std::isfinite(graph.breakdown.total)) {
      save();
      throw NumericFault("non-finite loss at iteration " + std::to_string(res.iterations));
    }
    Gradients grads = scoped_gradients(graph, res.model.params());
    const double norm = global_norm(grads);
    if (apply_update(res.model.params(), std::move(grads), res.optimizer, rms) == UpdateStatus::skipped_non_finite &&
        hooks.on_incident) {
      hooks.on_incident("skipped update with non-finite gradient at iteration " + std::to_string(res.iterations));
    }
    res.env_steps += config.steps_per_iteration();
    res.iterations += 1;
    for (const auto& e : batch.finished) {
      res.episode_rewards.push_back(e.reward);
      pending.push_back(e.reward);
    }
    res.episodes += static_cast<std::int64_t>(batch.finished.size());

    const bool last = res.env_steps >= config.total_steps;
    if (res.iterations % config.metrics_every == 0 || last) {
      MetricsRecord r;
      r.env = std::string(envs::kind_name(config.env.kind));
      r.agent = config.planning() ? "dpn" : "a2c";
      r.iteration = res.iterations;
      r.env_steps = res.env_steps;
      r.episodes = res.episodes;
      r.mean_reward_1000 = tail_mean(res.episode_rewards, 1000);
      r.mean_reward_100 = tail_mean(res.episode_rewards, 100);
      r.loss = graph.breakdown;
      r.grad_norm = norm;
      r.skipped_updates = res.optimizer.skipped;
      if (!config.sequential) {
        r.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      }
      r.episode_rewards = std::move(pending);
      pending.clear();
      if (hooks.on_metrics) hooks.on_metrics(r);
      res.records.push_back(std::move(r));
    }
    if (config.checkpoint_every > 0 && res.iterations % config.checkpoint_every == 0) save();
  }
  save();
  return res;
}

struct EvalResult {
  std::vector<double> rewards;
  std::vector<int> lengths;
  double mean_reward() const { return tail_mean(rewards, rewards.size()); }
};

/// Runs `episodes` full episodes with a fixed model. Layouts come from
/// derive_seed(seed, 0xe7a1, episode); sampling noise from Rng(seed, 0xe7a1).
inline EvalResult evaluate(const model::Model& m, const TrainConfig& c, int episodes, bool greedy, std::uint64_t seed) {
  if (episodes < 1) throw InvalidInput("episodes must be >= 1");
  EvalResult out;
  Rng rng(seed, 0xe7a1);
  envs::Environment env(c.env);
  const auto opt = plan_options(c);
  for (int e = 0; e < episodes; ++e) {
    env.reset(derive_seed(seed, 0xe7a1, static_cast<std::uint64_t>(e)));
    double total = 0.0;
    int length = 0;
    while (!env.state().done) {
      const ActResult a = act(m, env.observation(), opt, rng, greedy);
      total += env.step(static_cast<envs::Action>(a.action)).reward;
      ++length;
    }
    out.rewards.push_back(total);
    out.lengths.push_back(length);
  }
  return out;
}

}  // namespace dpn::train
