#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include "dpn/envs/golden.hpp"
#include "dpn/envs/grid.hpp"
#include "dpn/rng.hpp"

using namespace dpn;
using namespace dpn::envs;

namespace {

// Reference step written from the rule table, independent of envs::step.
struct RefOutcome {
  double reward = 0;
  bool done = false;
};

RefOutcome reference_step(const GridState& s, Action a, const EnvConfig& c) {
  const int dr[] = {-1, 1, 0, 0};
  const int dc[] = {0, 0, -1, 1};
  const int i = static_cast<int>(a);
  const Cell t{s.agent.row + dr[i], s.agent.col + dc[i]};
  const bool in = t.row >= 0 && t.row < s.height && t.col >= 0 && t.col < s.width;
  RefOutcome o{c.rewards.step, false};
  if (!in) {
    o.reward += c.rewards.offmap;
    o.done = true;
  } else if (c.kind == EnvKind::gridworld) {
    if (s.obstacles.count(t)) {
      o.reward += c.rewards.obstacle;
      o.done = true;
    } else if (s.goals.count(t)) {
      o.reward += c.rewards.goal;
      o.done = s.goals.size() == 1;
    }
  } else {
    std::size_t goals_left = s.goals.size();
    bool agent_moves = true;
    if (s.boxes.count(t)) {
      const Cell d{t.row + dr[i], t.col + dc[i]};
      const bool d_in = d.row >= 0 && d.row < s.height && d.col >= 0 && d.col < s.width;
      if (!d_in || s.boxes.count(d)) {
        agent_moves = false;
      } else if (s.goals.count(d)) {
        o.reward += c.rewards.goal;
        goals_left -= 1;
      } else if (s.obstacles.count(d)) {
        o.reward += c.rewards.obstacle;
      }
    }
    if (agent_moves && s.obstacles.count(t)) o.reward += c.rewards.obstacle;
    o.done = goals_left == 0;
  }
  if (!o.done && s.steps_taken + 1 >= c.step_limit) {
    o.reward += c.rewards.timeout;
    o.done = true;
  }
  return o;
}

// Independent BFS over non-obstacle cells from the agent.
bool goals_reachable(const GridState& s) {
  std::set<Cell> seen{s.agent};
  std::queue<Cell> q;
  q.push(s.agent);
  while (!q.empty()) {
    const Cell c = q.front();
    q.pop();
    for (int a = 0; a < kActionCount; ++a) {
      const Cell n = moved(c, static_cast<Action>(a));
      if (!s.inside(n) || s.obstacles.count(n) || seen.count(n)) continue;
      seen.insert(n);
      q.push(n);
    }
  }
  for (const Cell g : s.goals) {
    if (!seen.count(g)) return false;
  }
  return true;
}

EnvConfig small_gridworld() {
  EnvConfig c = EnvConfig::gridworld();
  c.size = 8;
  c.goal_count = 2;
  c.min_goal_separation = 3;
  return c;
}

struct SuiteStats {
  int episodes = 0;
  int steps = 0;
  int goal_events = 0;
  int terminal_hits = 0;
  int timeouts = 0;
};

// Random-policy episodes checked step by step against the reference.
SuiteStats run_property_suite(const EnvConfig& c, int episodes, std::uint64_t seed) {
  SuiteStats st;
  Rng rng(seed);
  for (int e = 0; e < episodes; ++e) {
    const GridState init = generate(c, derive_seed(seed, static_cast<std::uint64_t>(e)));
    // Layout invariants.
    EXPECT_EQ(static_cast<int>(init.goals.size()), c.goal_count);
    EXPECT_TRUE(init.inside(init.agent));
    EXPECT_FALSE(init.obstacles.count(init.agent));
    EXPECT_FALSE(init.goals.count(init.agent));
    for (const Cell g : init.goals) EXPECT_FALSE(init.obstacles.count(g));
    if (c.kind == EnvKind::gridworld) {
      EXPECT_EQ(static_cast<int>(init.obstacles.size()), c.gridworld_obstacle_count());
      for (const Cell g : init.goals) {
        EXPECT_GE(chebyshev(g, init.agent), c.min_goal_separation);
        for (const Cell h : init.goals) {
          if (!(g == h)) {
            EXPECT_GE(chebyshev(g, h), c.min_goal_separation);
          }
        }
      }
      EXPECT_TRUE(goals_reachable(init));
    } else {
      EXPECT_EQ(static_cast<int>(init.boxes.size()), c.box_count);
      EXPECT_EQ(static_cast<int>(init.obstacles.size()), c.obstacle_count);
      std::set<Cell> all{init.agent};
      all.insert(init.boxes.begin(), init.boxes.end());
      all.insert(init.goals.begin(), init.goals.end());
      all.insert(init.obstacles.begin(), init.obstacles.end());
      EXPECT_EQ(all.size(), 1 + init.boxes.size() + init.goals.size() + init.obstacles.size());
      for (const Cell x : all) {
        EXPECT_TRUE(x.row >= 1 && x.row <= c.size - 2 && x.col >= 1 && x.col <= c.size - 2);
      }
    }
    EXPECT_EQ(decode(observe(init)), entities(init));

    GridState s = init;
    int len = 0;
    while (!s.done) {
      const auto a = static_cast<Action>(rng.below(kActionCount));
      const RefOutcome ref = reference_step(s, a, c);
      const StepResult r = step(s, a, c);
      ++len;
      EXPECT_NEAR(r.reward, ref.reward, 1e-12);
      EXPECT_EQ(r.done, ref.done);
      EXPECT_EQ(r.state.done, r.done);
      EXPECT_EQ(r.state.steps_taken, s.steps_taken + 1);
      EXPECT_EQ(r.state.obstacles, s.obstacles);
      EXPECT_LE(r.state.goals.size(), s.goals.size());
      for (const Cell g : r.state.goals) EXPECT_TRUE(s.goals.count(g));
      const std::size_t consumed = s.goals.size() - r.state.goals.size();
      if (c.kind == EnvKind::push) {
        EXPECT_EQ(r.state.boxes.size() + consumed, s.boxes.size());
        for (const Cell b : r.state.boxes) EXPECT_TRUE(r.state.inside(b));
        EXPECT_FALSE(r.state.boxes.count(r.state.agent) && !r.state.off_map);
      } else {
        EXPECT_TRUE(r.state.boxes.empty());
      }
      st.goal_events += static_cast<int>(consumed);
      if (!r.state.off_map) {
        EXPECT_EQ(decode(observe(r.state)), entities(r.state));
      }
      if (r.done && r.state.steps_taken >= c.step_limit && !r.state.goals.empty() && !r.state.off_map) {
        ++st.timeouts;
      }
      if (r.done && c.kind == EnvKind::gridworld && r.state.obstacles.count(r.state.agent)) ++st.terminal_hits;
      s = r.state;
      if (::testing::Test::HasFailure()) return st;
    }
    EXPECT_LE(len, c.step_limit);
    EXPECT_THROW(step(s, Action::up, c), ContractViolation);
    st.steps += len;
    ++st.episodes;
  }
  return st;
}

std::string data_path(const std::string& name) { return std::string(DPN_TEST_DATA) + "/" + name; }

void check_golden(const EnvConfig& c, const std::string& file, int count) {
  std::vector<std::string> lines;
  for (int i = 0; i < count; ++i) lines.push_back(to_line(record_golden(c, 1000 + static_cast<std::uint64_t>(i))));
  const char* update = std::getenv("DPN_UPDATE_GOLDEN");
  if (update && std::string(update) == "1") {
    std::ofstream out(data_path(file));
    for (const auto& l : lines) out << l << "\n";
  }
  std::ifstream in(data_path(file));
  ASSERT_TRUE(in.good()) << "missing golden file " << data_path(file);
  std::string line;
  std::size_t i = 0;
  for (; std::getline(in, line); ++i) {
    ASSERT_LT(i, lines.size());
    EXPECT_EQ(line, lines[i]) << file << " line " << i + 1;
    const GoldenTrace g = golden_from_line(line);
    EXPECT_TRUE(replay_matches(c, g));
    EXPECT_EQ(to_line(g), line);
  }
  EXPECT_EQ(i, lines.size());
}

}  // namespace

TEST(Envs, GridworldPropertySuite) {
  const SuiteStats st = run_property_suite(small_gridworld(), 10000, 11);
  EXPECT_EQ(st.episodes, 10000);
  EXPECT_GT(st.goal_events, 0);
  EXPECT_GT(st.terminal_hits, 0);
}

TEST(Envs, DefaultGridworldPropertySuite) {
  const SuiteStats st = run_property_suite(EnvConfig::gridworld(), 10000, 12);
  EXPECT_EQ(st.episodes, 10000);
}

TEST(Envs, PushPropertySuite) {
  const SuiteStats st = run_property_suite(EnvConfig::push(), 10000, 13);
  EXPECT_EQ(st.episodes, 10000);
  EXPECT_GT(st.goal_events, 0);
  EXPECT_GT(st.timeouts, 0);
}

TEST(Envs, StepLimits) {
  EXPECT_EQ(EnvConfig::gridworld().step_limit, 70);
  EXPECT_EQ(EnvConfig::push().step_limit, 75);
  // Oscillating in open space hits the limit on exactly step 70.
  EnvConfig c = EnvConfig::gridworld();
  c.obstacle_density = 0;
  GridState s;
  s.width = s.height = 16;
  s.agent = {8, 8};
  s.goals = {{0, 0}};
  for (int t = 1; t <= 70; ++t) {
    const auto r = step(s, t % 2 ? Action::left : Action::right, c);
    EXPECT_EQ(r.done, t == 70);
    EXPECT_NEAR(r.reward, t == 70 ? -1.01 : -0.01, 1e-12);
    s = r.state;
  }
}

TEST(Envs, GridworldRewardExamples) {
  const EnvConfig c = EnvConfig::gridworld();
  GridState s;
  s.width = s.height = 16;
  s.agent = {5, 5};
  s.goals = {{5, 6}, {10, 10}};
  s.obstacles = {{4, 5}};
  auto r = step(s, Action::right, c);
  EXPECT_NEAR(r.reward, 0.99, 1e-12);
  EXPECT_FALSE(r.done);
  EXPECT_EQ(r.state.goals.size(), 1u);
  r = step(s, Action::up, c);
  EXPECT_NEAR(r.reward, -1.01, 1e-12);
  EXPECT_TRUE(r.done);
  s.agent = {0, 3};
  r = step(s, Action::up, c);
  EXPECT_NEAR(r.reward, -1.01, 1e-12);
  EXPECT_TRUE(r.done);
  EXPECT_TRUE(r.state.off_map);
  s.agent = {10, 9};
  s.goals = {{10, 10}};
  r = step(s, Action::right, c);
  EXPECT_NEAR(r.reward, 0.99, 1e-12);
  EXPECT_TRUE(r.done);
}

TEST(Envs, PushRuleExamples) {
  const EnvConfig c = EnvConfig::push();
  GridState s;
  s.width = s.height = 8;
  s.agent = {3, 3};
  s.boxes = {{3, 4}, {2, 3}, {4, 3}};
  s.goals = {{3, 5}, {6, 6}};
  s.obstacles = {{1, 3}, {3, 2}};
  // Box onto goal: both disappear.
  auto r = step(s, Action::right, c);
  EXPECT_NEAR(r.reward, 0.99, 1e-12);
  EXPECT_EQ(r.state.agent, (Cell{3, 4}));
  EXPECT_FALSE(r.state.boxes.count({3, 4}));
  EXPECT_FALSE(r.state.goals.count({3, 5}));
  EXPECT_FALSE(r.done);
  // Box onto obstacle: soft penalty, box stays there.
  r = step(s, Action::up, c);
  EXPECT_NEAR(r.reward, -0.21, 1e-12);
  EXPECT_TRUE(r.state.boxes.count({1, 3}));
  EXPECT_FALSE(r.done);
  // Agent onto obstacle: soft penalty, not terminal.
  r = step(s, Action::left, c);
  EXPECT_NEAR(r.reward, -0.21, 1e-12);
  EXPECT_EQ(r.state.agent, (Cell{3, 2}));
  EXPECT_FALSE(r.done);
  // Box against the edge: blocked, nothing moves.
  GridState e = s;
  e.agent = {6, 3};
  e.boxes = {{7, 3}};
  r = step(e, Action::down, c);
  EXPECT_NEAR(r.reward, -0.01, 1e-12);
  EXPECT_EQ(r.state.agent, e.agent);
  EXPECT_EQ(r.state.boxes, e.boxes);
  // Box against a box: blocked.
  e.agent = {5, 3};
  e.boxes = {{6, 3}, {7, 3}};
  r = step(e, Action::down, c);
  EXPECT_EQ(r.state.agent, e.agent);
  EXPECT_EQ(r.state.boxes, e.boxes);
  // Agent off-grid: offmap penalty, terminal.
  e.agent = {0, 0};
  r = step(e, Action::left, c);
  EXPECT_NEAR(r.reward, -1.01, 1e-12);
  EXPECT_TRUE(r.done);
  // Last goal consumed ends the episode.
  GridState f = s;
  f.goals = {{3, 5}};
  r = step(f, Action::right, c);
  EXPECT_TRUE(r.done);
}

TEST(Envs, InvalidInputs) {
  EnvConfig c = EnvConfig::gridworld();
  c.size = 2;
  c.goal_count = 2;
  c.min_goal_separation = 4;
  EXPECT_THROW(generate(c, 1), InvalidInput);
  EnvConfig p = EnvConfig::push();
  p.box_count = 40;
  EXPECT_THROW(p.validate(), InvalidInput);
  GridState s = generate(EnvConfig::gridworld(), 3);
  EXPECT_THROW(step(s, static_cast<Action>(7), EnvConfig::gridworld()), ContractViolation);
  EXPECT_THROW(parse_kind("maze"), InvalidInput);
}

TEST(Envs, GenerationDeterministic) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    EXPECT_EQ(generate(EnvConfig::gridworld(), seed), generate(EnvConfig::gridworld(), seed));
    EXPECT_EQ(generate(EnvConfig::push(), seed), generate(EnvConfig::push(), seed));
  }
  EXPECT_NE(render(generate(EnvConfig::gridworld(), 1)), render(generate(EnvConfig::gridworld(), 2)));
}

TEST(Envs, ObservationLayout) {
  const GridState s = generate(EnvConfig::push(), 5);
  const Observation o = observe(s);
  EXPECT_EQ(o.shape(), (Shape{4, 8, 8}));
  double total = 0;
  for (double v : o.data) {
    EXPECT_TRUE(v == 0.0 || v == 1.0);
    total += v;
  }
  EXPECT_EQ(total, 1.0 + 12 + 5 + 6);
  EXPECT_EQ(o.at(kAgent, static_cast<std::size_t>(s.agent.row), static_cast<std::size_t>(s.agent.col)), 1.0);
}

TEST(Envs, GoldenGridworld) { check_golden(EnvConfig::gridworld(), "golden_gridworld.jsonl", 20); }

TEST(Envs, GoldenPush) { check_golden(EnvConfig::push(), "golden_push.jsonl", 20); }

TEST(Envs, GoldenDetectsDrift) {
  const EnvConfig c = EnvConfig::push();
  GoldenTrace g = record_golden(c, 77);
  EXPECT_TRUE(replay_matches(c, g));
  g.rewards.back() += 1e-9;
  EXPECT_FALSE(replay_matches(c, g));
  g = record_golden(c, 77);
  g.layout[0] = g.layout[0] == '.' ? '#' : '.';
  EXPECT_FALSE(replay_matches(c, g));
  EXPECT_THROW(golden_from_line("{\"env\":\"push\"}"), std::exception);
}
