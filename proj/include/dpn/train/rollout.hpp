#pragma once

#include <cstdint>
#include <exception>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "dpn/envs/grid.hpp"
#include "dpn/model/dpn_model.hpp"
#include "dpn/planner/plan.hpp"
#include "dpn/train/config.hpp"

namespace dpn::train {

/// Forward pass for one acting step: encode, plan (DPN only), act logits and
/// value. Built with or without a graph depending on the caller's guard.
struct ForwardStep {
  model::Embedded z;
  Value h_outer;
  Value logits;
  Value value;
  std::optional<planner::PlanResult> plan;
};

inline planner::PlanOptions plan_options(const TrainConfig& c) {
  return {c.T, c.branching, c.metric, false};
}

inline ForwardStep forward_step(const model::Model& m, const envs::Observation& obs, const planner::PlanOptions& opt,
                                planner::NoiseTape& noise) {
  ForwardStep f;
  f.z = m.encode(obs);
  f.h_outer = m.outer_hidden(f.z);
  f.value = m.value_from_hidden(f.h_outer);
  if (m.config().planning) {
    f.plan = planner::plan(m, f.z, opt, noise);
    f.logits = m.act_logits(&f.plan->final_hidden, f.h_outer);
  } else {
    f.logits = m.act_logits(nullptr, f.h_outer);
  }
  return f;
}

/// Inverse-CDF draw from softmax(logits) with one uniform from the tape.
inline std::size_t sample_categorical(std::span<const double> logits, planner::NoiseTape& noise) {
  const auto p = softmax_values(logits);
  const double u = noise.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return i;
  }
  return p.size() - 1;
}

inline std::size_t argmax(std::span<const double> x) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    if (x[i] > x[best]) best = i;
  }
  return best;
}

struct ActResult {
  int action = 0;
  double log_prob = 0.0;
  double value = 0.0;
  std::vector<double> z;
  std::vector<double> noise;
  planner::PlanTrace trace;
};

/// Chooses an environment action without building a graph. Every random
/// draw goes through a recorded tape so the step can be replayed exactly.
inline ActResult act(const model::Model& m, const envs::Observation& obs, const planner::PlanOptions& opt, Rng& rng,
                     bool greedy = false) {
  NoGradGuard guard;
  planner::NoiseTape tape(rng);
  ForwardStep f = forward_step(m, obs, opt, tape);
  const std::size_t sampled = sample_categorical(f.logits.data(), tape);
  const std::size_t a = greedy ? argmax(f.logits.data()) : sampled;
  ActResult r;
  r.action = static_cast<int>(a);
  r.log_prob = log_softmax_values(f.logits.data())[a];
  r.value = f.value.item();
  r.z.assign(f.z.data().begin(), f.z.data().end());
  r.noise = tape.draws();
  if (f.plan) r.trace = std::move(f.plan->trace);
  return r;
}

/// One environment transition plus everything needed to rebuild its graph.
struct Transition {
  envs::Observation obs;
  envs::Observation next_obs;
  std::vector<double> z;
  int action = 0;
  double reward = 0.0;
  bool done = false;
  double value = 0.0;
  double log_prob = 0.0;
  std::vector<double> noise;
  planner::PlanTrace trace;
};

struct EpisodeEnd {
  int worker = 0;
  double reward = 0.0;
  int length = 0;
};

/// Rectangular [workers x n_step] block of transitions, worker-major.
struct RolloutBatch {
  int workers = 0;
  int n_step = 0;
  std::vector<Transition> steps;
  std::vector<double> bootstrap;  // V(next_obs) of each worker's last step, 0 if it ended an episode
  std::vector<EpisodeEnd> finished;

  const Transition& at(int w, int t) const { return steps[static_cast<std::size_t>(w * n_step + t)]; }
};

/// A worker's environment, random stream and episode bookkeeping. Episode
/// layouts are seeded from (seed, worker id, episode counter).
struct Worker {
  int id = 0;
  envs::Environment env;
  Rng rng;
  std::uint64_t global_seed = 0;
  std::uint64_t episode = 0;
  double episode_return = 0.0;
  int episode_length = 0;

  Worker(int worker_id, const envs::EnvConfig& config, std::uint64_t seed, std::uint64_t stream_salt = 0)
      : id(worker_id),
        env(config),
        rng(derive_seed(seed, 0xac7, stream_salt), static_cast<std::uint64_t>(worker_id)),
        global_seed(seed) {
    start_episode();
  }

  std::uint64_t episode_seed() const {
    return derive_seed(global_seed, static_cast<std::uint64_t>(id), episode);
  }

  void start_episode() {
    env.reset(episode_seed());
    episode_return = 0.0;
    episode_length = 0;
  }
};

inline std::vector<Worker> make_workers(const TrainConfig& c, std::uint64_t stream_salt = 0) {
  std::vector<Worker> ws;
  ws.reserve(static_cast<std::size_t>(c.workers));
  for (int w = 0; w < c.workers; ++w) ws.emplace_back(w, c.env, c.seed, stream_salt);
  return ws;
}

namespace detail {

inline void collect_worker(Worker& w, const model::Model& m, const TrainConfig& c, RolloutBatch& batch,
                           std::vector<EpisodeEnd>& finished) {
  const auto opt = plan_options(c);
  for (int t = 0; t < c.n_step; ++t) {
    Transition tr;
    tr.obs = w.env.observation();
    ActResult a = act(m, tr.obs, opt, w.rng);
    const envs::StepResult r = w.env.step(static_cast<envs::Action>(a.action));
    tr.next_obs = w.env.observation();
    tr.z = std::move(a.z);
    tr.action = a.action;
    tr.reward = r.reward;
    tr.done = r.done;
    tr.value = a.value;
    tr.log_prob = a.log_prob;
    tr.noise = std::move(a.noise);
    tr.trace = std::move(a.trace);
    tr.trace.initial_state = "w" + std::to_string(w.id) + ":e" + std::to_string(w.episode) + ":s" +
                             std::to_string(w.episode_length);
    w.episode_return += r.reward;
    w.episode_length += 1;
    if (r.done) {
      finished.push_back({w.id, w.episode_return, w.episode_length});
      w.episode += 1;
      w.start_episode();
    }
    batch.steps[static_cast<std::size_t>(w.id * c.n_step + t)] = std::move(tr);
  }
  const Transition& last = batch.steps[static_cast<std::size_t>(w.id * c.n_step + c.n_step - 1)];
  if (last.done) {
    batch.bootstrap[static_cast<std::size_t>(w.id)] = 0.0;
  } else {
    NoGradGuard guard;
    batch.bootstrap[static_cast<std::size_t>(w.id)] = m.value(m.encode(last.next_obs)).item();
  }
}

}  // namespace detail

/// Advances every worker n_step environment steps. Each action is preceded
/// by a T-step plan (DPN) whose trace is kept. Finished episodes restart
/// immediately with the next per-worker seed. Workers run on separate
/// threads unless `config.sequential`; the result is identical either way.
inline RolloutBatch collect_rollouts(std::vector<Worker>& workers, const model::Model& m, const TrainConfig& c) {
  RolloutBatch batch;
  batch.workers = static_cast<int>(workers.size());
  batch.n_step = c.n_step;
  batch.steps.resize(workers.size() * static_cast<std::size_t>(c.n_step));
  batch.bootstrap.assign(workers.size(), 0.0);
  std::vector<std::vector<EpisodeEnd>> finished(workers.size());
  if (c.sequential || workers.size() == 1) {
    for (std::size_t i = 0; i < workers.size(); ++i) detail::collect_worker(workers[i], m, c, batch, finished[i]);
  } else {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(workers.size());
    threads.reserve(workers.size());
    for (std::size_t i = 0; i < workers.size(); ++i) {
      threads.emplace_back([&, i] {
        try {
          detail::collect_worker(workers[i], m, c, batch, finished[i]);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    }
    for (auto& th : threads) th.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  for (auto& f : finished) batch.finished.insert(batch.finished.end(), f.begin(), f.end());
  return batch;
}

}  // namespace dpn::train
