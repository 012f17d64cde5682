#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dpn/envs/grid.hpp"
#include "dpn/model/dpn_model.hpp"
#include "dpn/planner/plan.hpp"

namespace dpn::train {

enum class AgentKind { dpn, a2c };

/// Every knob of a training run. Serialized as flat `key = value` text; the
/// same text is the manifest stored in checkpoints.
struct TrainConfig {
  AgentKind agent = AgentKind::dpn;
  envs::EnvConfig env = envs::EnvConfig::gridworld();

  int workers = 16;
  int n_step = 5;
  double gamma = 0.99;
  double lambda = 1.0;  // grounding weight
  double beta = 0.01;   // entropy weight, shared by every policy
  double lr = 7e-4;
  double rms_decay = 0.99;
  double rms_eps = 1e-5;
  double clip_norm = 0.5;  // <= 0 disables clipping
  std::int64_t total_steps = 1'000'000;
  int T = 3;
  model::Metric metric = model::Metric::l1;
  planner::BranchingMode branching = planner::BranchingMode::all;
  std::uint64_t seed = 0;

  std::size_t z_dim = 128;
  std::size_t outer_hidden = 128;
  std::size_t inner_hidden = 128;
  std::size_t conv_channels = 32;
  std::size_t conv_layers = 2;
  double temperature = 1.0;
  model::Residual residual = model::Residual::selected;
  bool stop_grounding_target = false;

  int metrics_every = 10;     // iterations between metrics records
  int checkpoint_every = 0;   // iterations between checkpoints; 0 = final only
  bool sequential = false;    // collect workers one after another on one thread

  bool planning() const { return agent == AgentKind::dpn; }

  model::ModelConfig model_config() const {
    model::ModelConfig m;
    m.height = m.width = static_cast<std::size_t>(env.size);
    m.conv_channels = conv_channels;
    m.conv_layers = conv_layers;
    m.z_dim = z_dim;
    m.outer_hidden = outer_hidden;
    m.inner_hidden = inner_hidden;
    m.planning = planning();
    m.temperature = temperature;
    m.residual = residual;
    return m;
  }

  std::int64_t steps_per_iteration() const { return static_cast<std::int64_t>(workers) * n_step; }

  void validate() const {
    env.validate();
    if (workers < 1) throw InvalidInput("workers must be >= 1");
    if (n_step < 1) throw InvalidInput("n_step must be >= 1");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidInput("gamma must be in (0, 1]");
    if (lambda < 0.0) throw InvalidInput("lambda must be >= 0");
    if (beta < 0.0) throw InvalidInput("beta must be >= 0");
    if (!(lr > 0.0)) throw InvalidInput("lr must be positive");
    if (!(rms_decay >= 0.0 && rms_decay < 1.0)) throw InvalidInput("rms_decay must be in [0, 1)");
    if (!(rms_eps > 0.0)) throw InvalidInput("rms_eps must be positive");
    if (total_steps < 0) throw InvalidInput("total_steps must be >= 0");
    if (planning() && T < 1) throw InvalidInput("T must be >= 1 for the dpn agent");
    if (!planning() && T != 0) throw InvalidInput("T must be 0 for the a2c agent");
    if (!(temperature > 0.0)) throw InvalidInput("temperature must be positive");
    if (z_dim == 0 || outer_hidden == 0 || inner_hidden == 0 || conv_channels == 0) {
      throw InvalidInput("layer sizes must be positive");
    }
    if (metrics_every < 1) throw InvalidInput("metrics_every must be >= 1");
    if (checkpoint_every < 0) throw InvalidInput("checkpoint_every must be >= 0");
  }
};

namespace detail {

inline std::string format_double(double x) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, p);
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw InvalidInput("config key '" + key + "': cannot parse '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InvalidInput("config key '" + key + "': expected true/false, got '" + v + "'");
}

}  // namespace detail

using KeyValues = std::map<std::string, std::string>;

/// Canonical key/value form of a config. Covers every field.
inline KeyValues to_key_values(const TrainConfig& c) {
  using detail::format_double;
  KeyValues kv;
  kv["agent"] = c.agent == AgentKind::dpn ? "dpn" : "a2c";
  kv["env"] = std::string(envs::kind_name(c.env.kind));
  kv["env_size"] = std::to_string(c.env.size);
  kv["goals"] = std::to_string(c.env.goal_count);
  kv["boxes"] = std::to_string(c.env.box_count);
  kv["obstacles"] = std::to_string(c.env.obstacle_count);
  kv["obstacle_density"] = format_double(c.env.obstacle_density);
  kv["min_goal_separation"] = std::to_string(c.env.min_goal_separation);
  kv["step_limit"] = std::to_string(c.env.step_limit);
  kv["r_goal"] = format_double(c.env.rewards.goal);
  kv["r_obstacle"] = format_double(c.env.rewards.obstacle);
  kv["r_step"] = format_double(c.env.rewards.step);
  kv["r_offmap"] = format_double(c.env.rewards.offmap);
  kv["r_timeout"] = format_double(c.env.rewards.timeout);
  kv["workers"] = std::to_string(c.workers);
  kv["n_step"] = std::to_string(c.n_step);
  kv["gamma"] = format_double(c.gamma);
  kv["lambda"] = format_double(c.lambda);
  kv["beta"] = format_double(c.beta);
  kv["lr"] = format_double(c.lr);
  kv["rms_decay"] = format_double(c.rms_decay);
  kv["rms_eps"] = format_double(c.rms_eps);
  kv["clip_norm"] = format_double(c.clip_norm);
  kv["total_steps"] = std::to_string(c.total_steps);
  kv["T"] = std::to_string(c.T);
  kv["metric"] = std::string(model::metric_name(c.metric));
  kv["branching"] = std::string(planner::mode_name(c.branching));
  kv["seed"] = std::to_string(c.seed);
  kv["z_dim"] = std::to_string(c.z_dim);
  kv["outer_hidden"] = std::to_string(c.outer_hidden);
  kv["inner_hidden"] = std::to_string(c.inner_hidden);
  kv["conv_channels"] = std::to_string(c.conv_channels);
  kv["conv_layers"] = std::to_string(c.conv_layers);
  kv["temperature"] = format_double(c.temperature);
  kv["residual"] = c.residual == model::Residual::selected ? "selected" : "current";
  kv["stop_grounding_target"] = c.stop_grounding_target ? "true" : "false";
  kv["metrics_every"] = std::to_string(c.metrics_every);
  kv["checkpoint_every"] = std::to_string(c.checkpoint_every);
  kv["sequential"] = c.sequential ? "true" : "false";
  return kv;
}

/// Builds a config from key/values. `env` is applied first so environment
/// defaults can be overridden key by key; `agent = a2c` defaults T to 0.
/// Unknown keys are rejected by name.
inline TrainConfig from_key_values(const KeyValues& kv) {
  const KeyValues known = to_key_values(TrainConfig{});
  for (const auto& [k, v] : kv) {
    if (!known.count(k)) throw InvalidInput("unknown config key '" + k + "'");
  }
  using detail::parse_bool;
  using detail::parse_number;
  TrainConfig c;
  if (auto it = kv.find("env"); it != kv.end()) c.env = envs::EnvConfig::defaults(envs::parse_kind(it->second));
  if (auto it = kv.find("agent"); it != kv.end()) {
    if (it->second == "dpn") {
      c.agent = AgentKind::dpn;
    } else if (it->second == "a2c") {
      c.agent = AgentKind::a2c;
      c.T = 0;
    } else {
      throw InvalidInput("config key 'agent': expected dpn or a2c, got '" + it->second + "'");
    }
  }
  for (const auto& [k, v] : kv) {
    if (k == "env" || k == "agent") continue;
    if (k == "env_size") c.env.size = parse_number<int>(k, v);
    else if (k == "goals") c.env.goal_count = parse_number<int>(k, v);
    else if (k == "boxes") c.env.box_count = parse_number<int>(k, v);
    else if (k == "obstacles") c.env.obstacle_count = parse_number<int>(k, v);
    else if (k == "obstacle_density") c.env.obstacle_density = parse_number<double>(k, v);
    else if (k == "min_goal_separation") c.env.min_goal_separation = parse_number<int>(k, v);
    else if (k == "step_limit") c.env.step_limit = parse_number<int>(k, v);
    else if (k == "r_goal") c.env.rewards.goal = parse_number<double>(k, v);
    else if (k == "r_obstacle") c.env.rewards.obstacle = parse_number<double>(k, v);
    else if (k == "r_step") c.env.rewards.step = parse_number<double>(k, v);
    else if (k == "r_offmap") c.env.rewards.offmap = parse_number<double>(k, v);
    else if (k == "r_timeout") c.env.rewards.timeout = parse_number<double>(k, v);
    else if (k == "workers") c.workers = parse_number<int>(k, v);
    else if (k == "n_step") c.n_step = parse_number<int>(k, v);
    else if (k == "gamma") c.gamma = parse_number<double>(k, v);
    else if (k == "lambda") c.lambda = parse_number<double>(k, v);
    else if (k == "beta") c.beta = parse_number<double>(k, v);
    else if (k == "lr") c.lr = parse_number<double>(k, v);
    else if (k == "rms_decay") c.rms_decay = parse_number<double>(k, v);
    else if (k == "rms_eps") c.rms_eps = parse_number<double>(k, v);
    else if (k == "clip_norm") c.clip_norm = parse_number<double>(k, v);
    else if (k == "total_steps") c.total_steps = parse_number<std::int64_t>(k, v);
    else if (k == "T") c.T = parse_number<int>(k, v);
    else if (k == "metric") c.metric = model::parse_metric(v);
    else if (k == "branching") c.branching = planner::parse_mode(v);
    else if (k == "seed") c.seed = parse_number<std::uint64_t>(k, v);
    else if (k == "z_dim") c.z_dim = parse_number<std::size_t>(k, v);
    else if (k == "outer_hidden") c.outer_hidden = parse_number<std::size_t>(k, v);
    else if (k == "inner_hidden") c.inner_hidden = parse_number<std::size_t>(k, v);
    else if (k == "conv_channels") c.conv_channels = parse_number<std::size_t>(k, v);
    else if (k == "conv_layers") c.conv_layers = parse_number<std::size_t>(k, v);
    else if (k == "temperature") c.temperature = parse_number<double>(k, v);
    else if (k == "residual") {
      if (v == "selected") c.residual = model::Residual::selected;
      else if (v == "current") c.residual = model::Residual::current;
      else throw InvalidInput("config key 'residual': expected selected or current, got '" + v + "'");
    }
    else if (k == "stop_grounding_target") c.stop_grounding_target = parse_bool(k, v);
    else if (k == "metrics_every") c.metrics_every = parse_number<int>(k, v);
    else if (k == "checkpoint_every") c.checkpoint_every = parse_number<int>(k, v);
    else if (k == "sequential") c.sequential = parse_bool(k, v);
  }
  c.validate();
  return c;
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
inline KeyValues parse_key_values(std::istream& in, const std::string& origin = "config") {
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidInput(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
  }
  return kv;
}

/// Applies `key=value` overrides on top of a parsed file.
inline void apply_overrides(KeyValues& kv, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw InvalidInput("override '" + o + "' is not key=value");
    kv[detail::trim(o.substr(0, eq))] = detail::trim(o.substr(eq + 1));
  }
}

inline TrainConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot read config file '" + path + "'");
  KeyValues kv = parse_key_values(in, path);
  apply_overrides(kv, overrides);
  return from_key_values(kv);
}

inline std::string to_text(const TrainConfig& c) {
  std::string out;
  for (const auto& [k, v] : to_key_values(c)) out += k + " = " + v + "\n";
  return out;
}

}  // namespace dpn::train
