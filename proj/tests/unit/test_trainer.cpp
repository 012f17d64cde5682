#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "dpn/diffcore/barrier.hpp"
#include "dpn/diffcore/grad_check.hpp"
#include "dpn/train/checkpoint.hpp"
#include "dpn/train/config.hpp"
#include "dpn/train/losses.hpp"
#include "dpn/train/optimizer.hpp"
#include "dpn/train/trainer.hpp"

using namespace dpn;
using namespace dpn::train;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.env.size = 5;
  c.env.goal_count = 1;
  c.env.obstacle_density = 0.1;
  c.env.min_goal_separation = 1;
  c.workers = 2;
  c.n_step = 3;
  c.T = 2;
  c.z_dim = 4;
  c.outer_hidden = 4;
  c.inner_hidden = 4;
  c.conv_channels = 2;
  c.conv_layers = 1;
  c.total_steps = 60;
  c.metrics_every = 2;
  c.sequential = true;
  return c;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("dpn_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

TrainHooks with_metrics(std::function<void(const MetricsRecord&)> f) {
  TrainHooks h;
  h.on_metrics = std::move(f);
  return h;
}

TrainHooks hooks(const std::string& checkpoint_path, const Checkpoint* resume) {
  TrainHooks h;
  h.checkpoint_path = checkpoint_path;
  h.resume = resume;
  return h;
}

}  // namespace

TEST(Returns, HandComputed) {
  // Two workers, three steps each, worker-major.
  const std::vector<double> r{1, 0, 2, 0, 1, 1};
  const std::vector<bool> d{false, false, false, false, true, false};
  const std::vector<double> boot{10, 5};
  const auto R = n_step_returns(r, d, boot, 0.5);
  EXPECT_DOUBLE_EQ(R[2], 2 + 0.5 * 10);
  EXPECT_DOUBLE_EQ(R[1], 0 + 0.5 * 7);
  EXPECT_DOUBLE_EQ(R[0], 1 + 0.5 * 3.5);
  EXPECT_DOUBLE_EQ(R[5], 1 + 0.5 * 5);
  EXPECT_DOUBLE_EQ(R[4], 1);
  EXPECT_DOUBLE_EQ(R[3], 0.5);
  EXPECT_THROW(n_step_returns(r, d, std::vector<double>{}, 0.5), ContractViolation);
  EXPECT_THROW(n_step_returns(r, {true}, boot, 0.5), ContractViolation);
}

TEST(Losses, BreakdownRecomposes) {
  TrainConfig c = tiny_config();
  c.lambda = 0.7;
  c.beta = 0.05;
  const auto m = model::Model::init(c.model_config(), 3);
  auto workers = make_workers(c);
  for (int k = 0; k < 5; ++k) {
    const auto b = collect_rollouts(workers, m, c);
    const auto g = compute_losses(b, m, c);
    const auto& lb = g.breakdown;
    const double expect = lb.policy + lb.value + lb.inner + c.lambda * lb.grounding -
                          c.beta * (lb.entropy_outer + lb.entropy_inner);
    EXPECT_NEAR(lb.total, expect, 1e-6);
    EXPECT_NEAR(g.outer_objective.item() + g.inner_objective.item(), lb.total, 1e-9);
    EXPECT_GT(lb.entropy_outer, 0.0);
    EXPECT_GT(lb.entropy_inner, 0.0);
    EXPECT_GE(lb.grounding, 0.0);
  }
}

TEST(Losses, LambdaZeroExcludesGrounding) {
  TrainConfig c = tiny_config();
  c.lambda = 0.0;
  const auto m = model::Model::init(c.model_config(), 4);
  auto workers = make_workers(c);
  const auto b = collect_rollouts(workers, m, c);
  const auto g = compute_losses(b, m, c);
  const auto& lb = g.breakdown;
  EXPECT_GT(lb.grounding, 0.0);
  EXPECT_NEAR(g.outer_objective.item(), lb.policy + lb.value - c.beta * lb.entropy_outer, 1e-12);
  // Raising lambda adds exactly lambda * dL_Z to the outer gradient.
  const Gradients g0 = backward(g.outer_objective, m.params());
  const Gradients gz = backward(g.grounding, m.params());
  TrainConfig c1 = c;
  c1.lambda = 0.5;
  const Gradients g1 = backward(compute_losses(b, m, c1).outer_objective, m.params());
  for (const auto& p : m.params().entries()) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      EXPECT_NEAR(g1.at(p.name)[i] - g0.at(p.name)[i], 0.5 * gz.at(p.name)[i], 1e-10) << p.name;
    }
  }
}

TEST(Losses, InnerGradientScopedToInnerAgent) {
  TrainConfig c = tiny_config();
  c.env.size = 6;
  c.workers = 3;
  c.n_step = 4;
  c.T = 3;
  auto m = model::Model::init(c.model_config(), 5);
  auto workers = make_workers(c);
  const RmsPropConfig rms{c.lr, c.rms_decay, c.rms_eps, c.clip_norm};
  RmsPropState opt;
  int inner_nonzero = 0;
  for (int batch = 0; batch < 50; ++batch) {
    const auto b = collect_rollouts(workers, m, c);
    const auto g = compute_losses(b, m, c);
    const Gradients inner = backward(g.inner_objective, m.params(), {.stop_at_barriers = true});
    for (const auto& p : m.params().entries()) {
      const auto& buf = inner.at(p.name);
      if (p.owner != Owner::inner_agent) {
        for (double x : buf) ASSERT_EQ(x, 0.0) << p.name << " batch " << batch;
      } else {
        for (double x : buf) inner_nonzero += x != 0.0;
      }
    }
    apply_update(m.params(), scoped_gradients(g, m.params()), opt, rms);
  }
  EXPECT_GT(inner_nonzero, 0);
}

TEST(Losses, FullLossFiniteDifference) {
  TrainConfig c = tiny_config();
  c.env.size = 4;
  c.T = 2;
  c.lambda = 0.5;
  c.beta = 0.1;
  auto mc = c.model_config();
  mc.hard = false;
  auto m = model::Model::init(mc, 6);
  // Nudge the transition weights away from zero so every path carries signal.
  Rng rng(17);
  for (auto& p : m.params().entries()) {
    for (double& x : p.value.mutable_data()) x += 0.05 * (rng.uniform() - 0.5);
  }
  auto workers = make_workers(c);
  const auto b = collect_rollouts(workers, m, c);

  BarrierTape capture(BarrierTape::Mode::capture);
  const auto g = compute_losses(b, m, c);
  const Gradients analytic = scoped_gradients(g, m.params());
  const auto captured = capture.values();

  const auto outer = [&](const ParamSet&) {
    NoGradGuard guard;
    BarrierTape replay(BarrierTape::Mode::capture);
    return compute_losses(b, m, c).outer_objective.item();
  };
  const auto inner = [&](const ParamSet&) {
    NoGradGuard guard;
    BarrierTape replay(BarrierTape::Mode::replay, captured);
    return compute_losses(b, m, c).inner_objective.item();
  };
  Gradients numeric = numeric_gradients(outer, m.params(), 1e-5);
  accumulate(numeric, numeric_gradients(inner, m.params(), 1e-5));
  const double err = max_relative_error(analytic, numeric);
  EXPECT_LT(err, 1e-3);
  double norm = 0;
  for (const auto& [n, buf] : numeric) {
    for (double x : buf) norm += x * x;
  }
  EXPECT_GT(norm, 1e-8);
}

TEST(Optimizer, HandComputedStep) {
  ParamSet ps;
  ps.add("w", Owner::encoder, {2}, {1.0, -1.0});
  RmsPropState st;
  const RmsPropConfig cfg{0.1, 0.99, 1e-8, 0.0};
  ASSERT_EQ(apply_update(ps, {{"w", {2.0, -0.5}}}, st, cfg), UpdateStatus::applied);
  const double sq0 = 0.01 * 4.0, sq1 = 0.01 * 0.25;
  EXPECT_NEAR(ps.value("w").data()[0], 1.0 - 0.1 * 2.0 / (std::sqrt(sq0) + 1e-8), 1e-12);
  EXPECT_NEAR(ps.value("w").data()[1], -1.0 + 0.1 * 0.5 / (std::sqrt(sq1) + 1e-8), 1e-12);
  EXPECT_NEAR(st.square_avg["w"][0], sq0, 1e-15);
  EXPECT_EQ(st.updates, 1u);
}

TEST(Optimizer, ClipsGlobalNorm) {
  Gradients g{{"a", {3.0}}, {"b", {4.0}}};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 0.5), 5.0);
  EXPECT_NEAR(g["a"][0], 0.3, 1e-15);
  EXPECT_NEAR(g["b"][0], 0.4, 1e-15);
  Gradients h{{"a", {0.1}}};
  clip_global_norm(h, 0.5);
  EXPECT_DOUBLE_EQ(h["a"][0], 0.1);
  Gradients u{{"a", {30.0}}};
  clip_global_norm(u, 0.0);
  EXPECT_DOUBLE_EQ(u["a"][0], 30.0);
}

TEST(Optimizer, SkipsNonFiniteAndIgnoresZero) {
  ParamSet ps;
  ps.add("w", Owner::encoder, {2}, {1.0, 2.0});
  RmsPropState st;
  const RmsPropConfig cfg;
  EXPECT_EQ(apply_update(ps, {{"w", {std::nan(""), 0.0}}}, st, cfg), UpdateStatus::skipped_non_finite);
  EXPECT_EQ(apply_update(ps, {{"w", {std::numeric_limits<double>::infinity(), 0.0}}}, st, cfg),
            UpdateStatus::skipped_non_finite);
  EXPECT_EQ(st.skipped, 2u);
  EXPECT_TRUE(st.square_avg.empty());
  EXPECT_EQ(apply_update(ps, {{"w", {0.0, 0.0}}}, st, cfg), UpdateStatus::applied);
  EXPECT_EQ(ps.value("w").data()[0], 1.0);
  EXPECT_EQ(ps.value("w").data()[1], 2.0);
}

TEST(Checkpoint, RoundTripIdempotent) {
  const TrainConfig c = tiny_config();
  const auto r = dpn::train::train(c);
  const Checkpoint ck = make_checkpoint(c, r.model, r.optimizer, r.env_steps, r.iterations, r.episodes);
  const std::string once = serialize(ck);
  const Checkpoint back = deserialize(once);
  EXPECT_EQ(serialize(back), once);
  EXPECT_EQ(serialize(deserialize(serialize(back))), once);
  EXPECT_EQ(back.manifest, to_text(c));
  EXPECT_EQ(back.env_steps, static_cast<std::uint64_t>(r.env_steps));
  EXPECT_EQ(back.optimizer.updates, r.optimizer.updates);
  for (const auto& p : r.model.params().entries()) {
    const auto& q = back.params.at(p.name);
    EXPECT_EQ(q.owner, p.owner);
    EXPECT_EQ(q.value.shape(), p.value.shape());
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      EXPECT_EQ(q.value.data()[i], static_cast<double>(static_cast<float>(p.value.data()[i])));
    }
  }
  const auto dir = temp_dir("ckpt");
  const std::string path = (dir / "c.bin").string();
  save_checkpoint(path, ck);
  EXPECT_EQ(serialize(load_checkpoint(path)), once);
  EXPECT_EQ(to_text(checkpoint_config(back)), to_text(c));
}

TEST(Checkpoint, RejectsCorruptAndMismatched) {
  const TrainConfig c = tiny_config();
  const auto m = model::Model::init(c.model_config(), 1);
  const std::string bytes = serialize(make_checkpoint(c, m, {}, 0, 0, 0));
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(deserialize(bytes.substr(0, cut)), std::exception) << cut;
  }
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize(bad), std::exception);
  EXPECT_THROW(deserialize(bytes + "x"), std::exception);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/c.bin"), std::exception);

  TrainConfig other = c;
  other.z_dim = 6;
  try {
    model_from_checkpoint(deserialize(bytes), other.model_config());
    FAIL() << "expected a shape mismatch";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("transition.w_zz"), std::string::npos) << e.what();
  }
}

TEST(Config, ParseRoundTripAndErrors) {
  TrainConfig c = tiny_config();
  c.metric = model::Metric::cosine;
  c.branching = planner::BranchingMode::current;
  std::istringstream in(to_text(c));
  const TrainConfig back = from_key_values(parse_key_values(in));
  EXPECT_EQ(to_text(back), to_text(c));

  std::istringstream unknown("workers = 2\nwrokers = 3\n");
  try {
    from_key_values(parse_key_values(unknown));
    FAIL() << "expected unknown key error";
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("wrokers"), std::string::npos);
  }
  std::istringstream comment("# note\n\nworkers = 3 \n");
  EXPECT_EQ(from_key_values(parse_key_values(comment)).workers, 3);
  std::istringstream noeq("workers 3\n");
  EXPECT_THROW(parse_key_values(noeq), InvalidInput);
  std::istringstream badnum("lr = fast\n");
  EXPECT_THROW(from_key_values(parse_key_values(badnum)), InvalidInput);

  KeyValues kv = to_key_values(c);
  apply_overrides(kv, {"T=5", "lambda=0.25"});
  const TrainConfig o = from_key_values(kv);
  EXPECT_EQ(o.T, 5);
  EXPECT_EQ(o.lambda, 0.25);
  EXPECT_THROW(apply_overrides(kv, {"T"}), InvalidInput);

  TrainConfig v = c;
  v.T = 0;
  EXPECT_THROW(v.validate(), InvalidInput);
  v = c;
  v.gamma = 1.5;
  EXPECT_THROW(v.validate(), InvalidInput);
  EXPECT_THROW(load_config("/nonexistent/x.cfg"), std::exception);
}

TEST(Trainer, StepCounterAndRecords) {
  TrainConfig c = tiny_config();
  c.total_steps = 31;
  std::vector<MetricsRecord> seen;
  const auto r = dpn::train::train(c, with_metrics([&](const MetricsRecord& x) { seen.push_back(x); }));
  EXPECT_EQ(r.iterations, 6);
  EXPECT_EQ(r.env_steps, 36);
  ASSERT_EQ(seen.size(), 3u);
  for (std::size_t i = 0; i < seen.size(); ++i) {
    EXPECT_EQ(seen[i].env_steps, seen[i].iteration * c.workers * c.n_step);
    EXPECT_EQ(seen[i].agent, "dpn");
    EXPECT_EQ(seen[i].env, "gridworld");
    EXPECT_EQ(to_json_line(metrics_from_json_line(to_json_line(seen[i]))), to_json_line(seen[i]));
  }
  std::size_t eps = 0;
  for (const auto& s : seen) eps += s.episode_rewards.size();
  EXPECT_EQ(static_cast<std::int64_t>(eps), r.episodes);
  EXPECT_EQ(r.optimizer.updates, 6u);
}

TEST(Trainer, SequentialIsDeterministic) {
  const TrainConfig c = tiny_config();
  std::string a, b;
  dpn::train::train(c, with_metrics([&](const MetricsRecord& x) { a += to_json_line(x) + "\n"; }));
  dpn::train::train(c, with_metrics([&](const MetricsRecord& x) { b += to_json_line(x) + "\n"; }));
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, b);

  TrainConfig p = c;
  p.sequential = false;
  const auto threaded = dpn::train::train(p);
  const auto sequential = dpn::train::train(c);
  ASSERT_EQ(threaded.records.size(), sequential.records.size());
  for (std::size_t i = 0; i < threaded.records.size(); ++i) {
    MetricsRecord x = threaded.records[i];
    x.wall_clock_s = 0;
    EXPECT_EQ(to_json_line(x), to_json_line(sequential.records[i]));
  }
}

TEST(Trainer, ResumeContinuesCounters) {
  TrainConfig c = tiny_config();
  const auto dir = temp_dir("resume");
  const std::string path = (dir / "c.bin").string();
  c.total_steps = 24;
  const auto first = dpn::train::train(c, hooks(path, nullptr));
  const Checkpoint ck = load_checkpoint(path);
  EXPECT_EQ(ck.iterations, 4u);
  c.total_steps = 48;
  const auto second = dpn::train::train(c, hooks("", &ck));
  EXPECT_EQ(second.iterations, 8);
  EXPECT_EQ(second.env_steps, 48);
  EXPECT_EQ(second.optimizer.updates, 8u);
  EXPECT_GE(second.episodes, first.episodes);
}

TEST(Trainer, NonFiniteLossSavesAndThrows) {
  TrainConfig c = tiny_config();
  auto m = model::Model::init(c.model_config(), c.seed);
  for (auto& p : m.params().entries()) {
    if (p.name == "outer.w_v") p.value.mutable_data()[0] = std::nan("");
  }
  const Checkpoint poisoned = make_checkpoint(c, m, {}, 0, 0, 0);
  const auto dir = temp_dir("fault");
  const std::string path = (dir / "c.bin").string();
  EXPECT_THROW(dpn::train::train(c, hooks(path, &poisoned)), NumericFault);
  EXPECT_TRUE(std::filesystem::exists(path));
}

TEST(Trainer, EvaluateIsDeterministic) {
  const TrainConfig c = tiny_config();
  const auto m = model::Model::init(c.model_config(), 2);
  const auto a = evaluate(m, c, 5, false, 9);
  const auto b = evaluate(m, c, 5, false, 9);
  EXPECT_EQ(a.rewards, b.rewards);
  EXPECT_EQ(a.lengths, b.lengths);
  EXPECT_THROW(evaluate(m, c, 0, false, 9), InvalidInput);
}
