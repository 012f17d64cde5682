#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <compare>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "dpn/diffcore/value.hpp"
#include "dpn/rng.hpp"

namespace dpn::envs {

enum class EnvKind { gridworld, push };

inline std::string_view kind_name(EnvKind k) { return k == EnvKind::gridworld ? "gridworld" : "push"; }

inline EnvKind parse_kind(std::string_view s) {
  if (s == "gridworld") return EnvKind::gridworld;
  if (s == "push") return EnvKind::push;
  throw InvalidInput("unknown environment kind '" + std::string(s) + "'");
}

enum class Action : int { up = 0, down = 1, left = 2, right = 3 };
inline constexpr int kActionCount = 4;

struct Cell {
  int row = 0;
  int col = 0;
  auto operator<=>(const Cell&) const = default;
};

inline Cell moved(Cell c, Action a) {
  switch (a) {
    case Action::up: return {c.row - 1, c.col};
    case Action::down: return {c.row + 1, c.col};
    case Action::left: return {c.row, c.col - 1};
    case Action::right: return {c.row, c.col + 1};
  }
  return c;
}

inline int chebyshev(Cell a, Cell b) { return std::max(std::abs(a.row - b.row), std::abs(a.col - b.col)); }

struct RewardTable {
  double goal = 1.0;
  double obstacle = -1.0;
  double step = -0.01;
  double offmap = -1.0;
  double timeout = -1.0;
};

struct EnvConfig {
  EnvKind kind = EnvKind::gridworld;
  int size = 16;
  int goal_count = 3;
  int box_count = 0;
  int obstacle_count = 0;        // push: exact count
  double obstacle_density = 0.15; // gridworld: fraction of grid cells
  int min_goal_separation = 4;   // Chebyshev, gridworld only
  int step_limit = 70;
  RewardTable rewards;

  static EnvConfig gridworld() { return {}; }

  static EnvConfig push() {
    EnvConfig c;
    c.kind = EnvKind::push;
    c.size = 8;
    c.goal_count = 5;
    c.box_count = 12;
    c.obstacle_count = 6;
    c.obstacle_density = 0.0;
    c.min_goal_separation = 0;
    c.step_limit = 75;
    c.rewards = {1.0, -0.2, -0.01, -1.0, 0.0};
    return c;
  }

  static EnvConfig defaults(EnvKind kind) { return kind == EnvKind::gridworld ? gridworld() : push(); }

  bool obstacles_terminal() const { return kind == EnvKind::gridworld; }

  int gridworld_obstacle_count() const {
    return static_cast<int>(std::lround(obstacle_density * size * size));
  }

  void validate() const {
    if (size < 2) throw InvalidInput("environment size must be at least 2");
    if (goal_count < 1) throw InvalidInput("goal_count must be at least 1");
    if (step_limit < 1) throw InvalidInput("step_limit must be at least 1");
    if (obstacle_density < 0 || obstacle_density >= 1) throw InvalidInput("obstacle_density must be in [0, 1)");
    if (kind == EnvKind::push) {
      if (size < 3) throw InvalidInput("push needs size >= 3");
      const int region = (size - 2) * (size - 2);
      if (1 + box_count + goal_count + obstacle_count > region) {
        throw InvalidInput("push entities do not fit in the central region");
      }
    } else if (gridworld_obstacle_count() + goal_count + 1 > size * size) {
      throw InvalidInput("gridworld entities do not fit on the grid");
    }
  }
};

struct GridState {
  int width = 0;
  int height = 0;
  Cell agent;
  std::set<Cell> boxes;
  std::set<Cell> goals;
  std::set<Cell> obstacles;
  int steps_taken = 0;
  bool done = false;
  bool off_map = false;

  bool inside(Cell c) const { return c.row >= 0 && c.row < height && c.col >= 0 && c.col < width; }
  bool operator==(const GridState&) const = default;
};

struct StepResult {
  GridState state;
  double reward = 0.0;
  bool done = false;
};

namespace detail {

inline std::vector<Cell> shuffled(std::vector<Cell> cells, Rng& rng) {
  for (std::size_t i = cells.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(cells[i - 1], cells[j]);
  }
  return cells;
}

inline bool all_goals_reachable(const GridState& s) {
  std::vector<char> seen(static_cast<std::size_t>(s.width * s.height), 0);
  std::vector<Cell> frontier{s.agent};
  seen[static_cast<std::size_t>(s.agent.row * s.width + s.agent.col)] = 1;
  std::size_t found = 0;
  while (!frontier.empty()) {
    const Cell c = frontier.back();
    frontier.pop_back();
    if (s.goals.count(c)) ++found;
    for (int a = 0; a < kActionCount; ++a) {
      const Cell n = moved(c, static_cast<Action>(a));
      if (!s.inside(n) || s.obstacles.count(n)) continue;
      auto& flag = seen[static_cast<std::size_t>(n.row * s.width + n.col)];
      if (flag) continue;
      flag = 1;
      frontier.push_back(n);
    }
  }
  return found == s.goals.size();
}

inline std::optional<GridState> try_gridworld(const EnvConfig& config, Rng& rng) {
  GridState s;
  s.width = s.height = config.size;
  std::vector<Cell> cells;
  for (int r = 0; r < config.size; ++r) {
    for (int c = 0; c < config.size; ++c) cells.push_back({r, c});
  }
  cells = shuffled(std::move(cells), rng);
  const auto n_obstacles = static_cast<std::size_t>(config.gridworld_obstacle_count());
  std::size_t i = 0;
  for (; i < n_obstacles; ++i) s.obstacles.insert(cells[i]);

  std::vector<Cell> rest(cells.begin() + static_cast<std::ptrdiff_t>(i), cells.end());
  const int sep = config.min_goal_separation;
  for (const Cell c : rest) {
    if (static_cast<int>(s.goals.size()) == config.goal_count) break;
    bool ok = true;
    for (const Cell g : s.goals) ok = ok && chebyshev(c, g) >= sep;
    if (ok) s.goals.insert(c);
  }
  if (static_cast<int>(s.goals.size()) != config.goal_count) return std::nullopt;

  bool placed = false;
  for (const Cell c : rest) {
    if (s.goals.count(c)) continue;
    bool ok = true;
    for (const Cell g : s.goals) ok = ok && chebyshev(c, g) >= sep;
    if (ok) {
      s.agent = c;
      placed = true;
      break;
    }
  }
  if (!placed || !all_goals_reachable(s)) return std::nullopt;
  return s;
}

}  // namespace detail

inline constexpr int kMaxGenerationAttempts = 10000;

/// Multi-goal gridworld layout. Each attempt draws from its own derived
/// sub-seed; attempts that violate separation or reachability are discarded.
inline GridState generate_gridworld(const EnvConfig& config, std::uint64_t seed) {
  if (config.kind != EnvKind::gridworld) throw ContractViolation("generate_gridworld: config is not gridworld");
  config.validate();
  for (int attempt = 0; attempt < kMaxGenerationAttempts; ++attempt) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    if (auto s = detail::try_gridworld(config, rng)) return *s;
  }
  throw InvalidInput("gridworld generation unsatisfiable for this configuration");
}

/// Push layout: agent, boxes, goals and obstacles on distinct cells of the
/// central region (the outer ring stays empty).
inline GridState generate_push(const EnvConfig& config, std::uint64_t seed) {
  if (config.kind != EnvKind::push) throw ContractViolation("generate_push: config is not push");
  config.validate();
  Rng rng(derive_seed(seed, 0));
  GridState s;
  s.width = s.height = config.size;
  std::vector<Cell> cells;
  for (int r = 1; r < config.size - 1; ++r) {
    for (int c = 1; c < config.size - 1; ++c) cells.push_back({r, c});
  }
  cells = detail::shuffled(std::move(cells), rng);
  std::size_t i = 0;
  s.agent = cells[i++];
  for (int k = 0; k < config.box_count; ++k) s.boxes.insert(cells[i++]);
  for (int k = 0; k < config.goal_count; ++k) s.goals.insert(cells[i++]);
  for (int k = 0; k < config.obstacle_count; ++k) s.obstacles.insert(cells[i++]);
  return s;
}

inline GridState generate(const EnvConfig& config, std::uint64_t seed) {
  return config.kind == EnvKind::gridworld ? generate_gridworld(config, seed) : generate_push(config, seed);
}

inline StepResult step(const GridState& state, Action action, const EnvConfig& config) {
  if (state.done) throw ContractViolation("step called on a finished episode");
  const int a = static_cast<int>(action);
  if (a < 0 || a >= kActionCount) throw ContractViolation("invalid action");
  StepResult out{state, config.rewards.step, false};
  GridState& s = out.state;
  s.steps_taken += 1;
  const Cell target = moved(s.agent, action);

  if (!s.inside(target)) {
    s.agent = target;
    s.off_map = true;
    out.reward += config.rewards.offmap;
    out.done = true;
  } else if (config.kind == EnvKind::gridworld) {
    s.agent = target;
    if (s.obstacles.count(target)) {
      out.reward += config.rewards.obstacle;
      out.done = true;
    } else if (s.goals.erase(target)) {
      out.reward += config.rewards.goal;
      out.done = s.goals.empty();
    }
  } else {
    bool moves = true;
    if (s.boxes.count(target)) {
      const Cell dest = moved(target, action);
      if (!s.inside(dest) || s.boxes.count(dest)) {
        moves = false;
      } else {
        s.boxes.erase(target);
        if (s.goals.erase(dest)) {
          out.reward += config.rewards.goal;
        } else {
          s.boxes.insert(dest);
          if (s.obstacles.count(dest)) out.reward += config.rewards.obstacle;
        }
      }
    }
    if (moves) {
      s.agent = target;
      if (s.obstacles.count(target)) out.reward += config.rewards.obstacle;
    }
    out.done = s.goals.empty();
  }

  if (!out.done && s.steps_taken >= config.step_limit) {
    out.reward += config.rewards.timeout;
    out.done = true;
  }
  s.done = out.done;
  return out;
}

/// Entity channels of an observation, in order.
enum Channel : std::size_t { kAgent = 0, kBox = 1, kGoal = 2, kObstacle = 3, kChannelCount = 4 };

struct Observation {
  std::size_t channels = kChannelCount;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;  // [channels, height, width]

  double at(std::size_t c, std::size_t r, std::size_t col) const { return data[(c * height + r) * width + col]; }
  Shape shape() const { return {channels, height, width}; }
  bool operator==(const Observation&) const = default;
};

inline Observation observe(const GridState& s) {
  Observation o;
  o.height = static_cast<std::size_t>(s.height);
  o.width = static_cast<std::size_t>(s.width);
  o.data.assign(o.channels * o.height * o.width, 0.0);
  auto set = [&](std::size_t c, Cell cell) {
    o.data[(c * o.height + static_cast<std::size_t>(cell.row)) * o.width + static_cast<std::size_t>(cell.col)] = 1.0;
  };
  if (s.inside(s.agent)) set(kAgent, s.agent);
  for (Cell c : s.boxes) set(kBox, c);
  for (Cell c : s.goals) set(kGoal, c);
  for (Cell c : s.obstacles) set(kObstacle, c);
  return o;
}

struct EntitySets {
  std::optional<Cell> agent;
  std::set<Cell> boxes;
  std::set<Cell> goals;
  std::set<Cell> obstacles;
  bool operator==(const EntitySets&) const = default;
};

inline EntitySets decode(const Observation& o) {
  EntitySets e;
  for (std::size_t r = 0; r < o.height; ++r) {
    for (std::size_t c = 0; c < o.width; ++c) {
      const Cell cell{static_cast<int>(r), static_cast<int>(c)};
      if (o.at(kAgent, r, c) != 0.0) e.agent = cell;
      if (o.at(kBox, r, c) != 0.0) e.boxes.insert(cell);
      if (o.at(kGoal, r, c) != 0.0) e.goals.insert(cell);
      if (o.at(kObstacle, r, c) != 0.0) e.obstacles.insert(cell);
    }
  }
  return e;
}

inline EntitySets entities(const GridState& s) {
  EntitySets e{std::nullopt, s.boxes, s.goals, s.obstacles};
  if (s.inside(s.agent)) e.agent = s.agent;
  return e;
}

/// Plain-text layout: A agent, B box, G goal, # obstacle, . empty.
inline std::string render(const GridState& s) {
  std::string out;
  for (int r = 0; r < s.height; ++r) {
    for (int c = 0; c < s.width; ++c) {
      const Cell cell{r, c};
      char ch = '.';
      if (s.obstacles.count(cell)) ch = '#';
      if (s.goals.count(cell)) ch = 'G';
      if (s.boxes.count(cell)) ch = 'B';
      if (s.agent == cell && !s.off_map) ch = 'A';
      out += ch;
    }
    out += '\n';
  }
  return out;
}

/// One running episode bound to its configuration.
class Environment {
 public:
  explicit Environment(EnvConfig config) : config_(std::move(config)) { config_.validate(); }

  const GridState& reset(std::uint64_t seed) {
    state_ = generate(config_, seed);
    return state_;
  }

  StepResult step(Action a) {
    StepResult r = envs::step(state_, a, config_);
    state_ = r.state;
    return r;
  }

  const GridState& state() const { return state_; }
  const EnvConfig& config() const { return config_; }
  Observation observation() const { return observe(state_); }

 private:
  EnvConfig config_;
  GridState state_;
};

}  // namespace dpn::envs
