#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpn/baselines/a2c.hpp"
#include "dpn/planner/analysis.hpp"
#include "dpn/planner/trace_io.hpp"
#include "dpn/train/trainer.hpp"

namespace dpn::cli {

namespace fs = std::filesystem;

inline constexpr const char* kMetricsFile = "metrics.jsonl";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kConfigFile = "config.cfg";

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot read '" + path + "'");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("cannot write '" + path.string() + "'");
  out << text;
}

// train ----------------------------------------------------------------------

struct TrainArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  bool resume = false;
  bool sequential = false;
};

inline train::TrainConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides,
                                         std::optional<std::uint64_t> seed, bool sequential) {
  train::TrainConfig c = train::load_config(path, overrides);
  if (seed) c.seed = *seed;
  if (sequential) c.sequential = true;
  c.validate();
  return c;
}

/// Writes <out>/config.cfg, <out>/metrics.jsonl and <out>/checkpoint.bin.
/// With `resume`, continues from <out>/checkpoint.bin and appends metrics.
inline train::TrainResult run_train(const TrainArgs& a, std::ostream& log) {
  const train::TrainConfig c = resolve_config(a.config_path, a.overrides, a.seed, a.sequential);
  const fs::path out(a.out_dir);
  fs::create_directories(out);
  std::optional<train::Checkpoint> resume;
  if (a.resume) {
    resume = train::load_checkpoint((out / kCheckpointFile).string());
    log << "resuming at env step " << resume->env_steps << "\n";
  }
  write_text(out / kConfigFile, train::to_text(c));
  std::ofstream metrics(out / kMetricsFile, a.resume ? std::ios::app : std::ios::trunc);
  if (!metrics) throw InvalidInput("cannot write metrics in '" + a.out_dir + "'");

  train::TrainHooks hooks;
  hooks.checkpoint_path = (out / kCheckpointFile).string();
  hooks.resume = resume ? &*resume : nullptr;
  hooks.on_metrics = [&](const train::MetricsRecord& r) {
    metrics << train::to_json_line(r) << "\n";
    metrics.flush();
    log << r.agent << " " << r.env << " steps=" << r.env_steps << " episodes=" << r.episodes
        << " mean100=" << r.mean_reward_100 << " loss=" << r.loss.total << "\n";
  };
  hooks.on_incident = [&](const std::string& msg) { log << "warning: " << msg << "\n"; };
  return train::train(c, hooks);
}

// eval -----------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  int episodes = 100;
  bool greedy = false;
  std::uint64_t seed = 0;
  std::string config_path;  // optional; defaults to the checkpoint manifest
  std::vector<std::string> overrides;
};

struct EvalSummary {
  int episodes = 0;
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;
  double mean_length = 0.0;
};

inline EvalSummary summarize(const train::EvalResult& r) {
  EvalSummary s;
  s.episodes = static_cast<int>(r.rewards.size());
  if (r.rewards.empty()) return s;
  s.mean = r.mean_reward();
  double var = 0.0;
  for (double x : r.rewards) var += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(r.rewards.size()));
  s.min = *std::min_element(r.rewards.begin(), r.rewards.end());
  s.max = *std::max_element(r.rewards.begin(), r.rewards.end());
  double len = 0.0;
  for (int l : r.lengths) len += l;
  s.mean_length = len / static_cast<double>(r.lengths.size());
  return s;
}

inline std::string to_json_line(const EvalSummary& s) {
  nlohmann::ordered_json j;
  j["episodes"] = s.episodes;
  j["mean_reward"] = s.mean;
  j["std_reward"] = s.stddev;
  j["min_reward"] = s.min;
  j["max_reward"] = s.max;
  j["mean_length"] = s.mean_length;
  return j.dump();
}

inline std::pair<train::TrainConfig, model::Model> load_agent(const std::string& checkpoint,
                                                             const std::string& config_path,
                                                             const std::vector<std::string>& overrides) {
  const train::Checkpoint ck = train::load_checkpoint(checkpoint);
  train::TrainConfig c;
  if (config_path.empty()) {
    train::KeyValues kv = train::to_key_values(train::checkpoint_config(ck));
    train::apply_overrides(kv, overrides);
    c = train::from_key_values(kv);
  } else {
    c = train::load_config(config_path, overrides);
  }
  c.validate();
  return {c, train::model_from_checkpoint(ck, c.model_config())};
}

inline EvalSummary run_eval(const EvalArgs& a) {
  if (a.episodes < 1) throw InvalidInput("--episodes must be at least 1");
  const auto [c, m] = load_agent(a.checkpoint, a.config_path, a.overrides);
  return summarize(train::evaluate(m, c, a.episodes, a.greedy, a.seed));
}

// trace ----------------------------------------------------------------------

struct TraceArgs {
  std::string checkpoint;
  std::string out_path;
  int episodes = 10;
  bool greedy = false;
  std::uint64_t seed = 0;
  std::vector<std::string> overrides;
};

/// Plays `episodes` episodes and writes one plan trace per acting step.
/// Returns the number of traces written.
inline std::size_t run_trace(const TraceArgs& a) {
  if (a.episodes < 1) throw InvalidInput("--episodes must be at least 1");
  const auto [c, m] = load_agent(a.checkpoint, "", a.overrides);
  if (!c.planning()) throw InvalidInput("trace needs a planning (dpn) checkpoint");
  std::ofstream out(a.out_path, std::ios::trunc);
  if (!out) throw InvalidInput("cannot write '" + a.out_path + "'");
  Rng rng(a.seed, 0x7ace);
  envs::Environment env(c.env);
  const auto opt = train::plan_options(c);
  std::size_t written = 0;
  for (int e = 0; e < a.episodes; ++e) {
    env.reset(derive_seed(a.seed, 0x7ace, static_cast<std::uint64_t>(e)));
    for (int t = 0; !env.state().done; ++t) {
      train::ActResult r = train::act(m, env.observation(), opt, rng, a.greedy);
      r.trace.initial_state = "e" + std::to_string(e) + ":s" + std::to_string(t);
      out << planner::export_trace(r.trace) << "\n";
      ++written;
      env.step(static_cast<envs::Action>(r.action));
    }
  }
  return written;
}

// patterns -------------------------------------------------------------------

struct PatternCounts {
  std::size_t breadth_first = 0;
  std::size_t depth_first = 0;
  std::size_t mixed = 0;
  std::vector<std::string> errors;  // "line N: message"

  std::size_t total() const { return breadth_first + depth_first + mixed; }
  double share(std::size_t n) const { return total() == 0 ? 0.0 : static_cast<double>(n) / static_cast<double>(total()); }
};

inline PatternCounts count_patterns(const std::vector<std::string>& lines) {
  PatternCounts pc;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto trace = planner::import_trace(lines[i]);
      switch (planner::classify_pattern(trace)) {
        case planner::Pattern::breadth_first: ++pc.breadth_first; break;
        case planner::Pattern::depth_first: ++pc.depth_first; break;
        case planner::Pattern::mixed: ++pc.mixed; break;
      }
    } catch (const std::exception& e) {
      pc.errors.push_back("line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return pc;
}

inline PatternCounts run_patterns(const std::string& path) { return count_patterns(read_lines(path)); }

inline std::string format_patterns(const PatternCounts& pc) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  os << "pattern        count  share\n";
  os << "breadth_first  " << std::setw(5) << pc.breadth_first << "  " << 100.0 * pc.share(pc.breadth_first) << "%\n";
  os << "depth_first    " << std::setw(5) << pc.depth_first << "  " << 100.0 * pc.share(pc.depth_first) << "%\n";
  os << "mixed          " << std::setw(5) << pc.mixed << "  " << 100.0 * pc.share(pc.mixed) << "%\n";
  return os.str();
}

// bench ----------------------------------------------------------------------

struct BenchArgs {
  std::uint64_t actions = 4;
  std::uint64_t depth = 3;
  std::uint64_t T = 3;
  std::uint64_t L = 3;
};

struct BenchTable {
  std::uint64_t exhaustive_tree = 0;
  std::uint64_t fixed_rollouts = 0;
  std::uint64_t dpn = 0;
  double reduction_percent = 0.0;  // dpn vs exhaustive_tree
};

inline BenchTable run_bench(const BenchArgs& a) {
  using planner::CountMethod;
  BenchTable t;
  t.exhaustive_tree = planner::transition_count(CountMethod::exhaustive_tree, a.actions, a.depth);
  t.fixed_rollouts = planner::transition_count(CountMethod::fixed_rollouts, a.actions, a.depth, a.L);
  t.dpn = planner::transition_count(CountMethod::dpn, a.actions, a.T);
  t.reduction_percent =
      100.0 * (1.0 - static_cast<double>(t.dpn) / static_cast<double>(t.exhaustive_tree));
  return t;
}

inline std::string format_bench(const BenchArgs& a, const BenchTable& t) {
  std::ostringstream os;
  os << "method           transitions\n";
  os << "exhaustive_tree  " << t.exhaustive_tree << "   (|A|=" << a.actions << ", depth=" << a.depth << ")\n";
  os << "fixed_rollouts   " << t.fixed_rollouts << "   (|A|=" << a.actions << ", L=" << a.L << ")\n";
  os << "dpn              " << t.dpn << "   (T=" << a.T << ")\n";
  os << std::fixed << std::setprecision(1) << "reduction        " << t.reduction_percent << "%\n";
  return os.str();
}

// plot -----------------------------------------------------------------------

struct Curve {
  std::string run;
  std::string env;
  std::string agent;
  std::vector<std::int64_t> env_steps;  // step count of the record that reported each episode
  std::vector<double> rewards;
  std::vector<double> smoothed;
};

/// Trailing moving average: out[i] = mean(x[max(0, i - window + 1) .. i]).
inline std::vector<double> moving_average(const std::vector<double>& x, std::size_t window) {
  std::vector<double> out(x.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    acc += x[i];
    if (i >= window) acc -= x[i - window];
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

inline Curve load_curve(const std::string& path, std::size_t window) {
  Curve c;
  c.run = fs::path(path).parent_path().filename().string();
  if (c.run.empty()) c.run = fs::path(path).stem().string();
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    train::MetricsRecord r;
    try {
      r = train::metrics_from_json_line(line);
    } catch (const std::exception& e) {
      throw InvalidInput("'" + path + "': malformed metrics record: " + e.what());
    }
    if (c.env.empty()) {
      c.env = r.env;
      c.agent = r.agent;
    }
    for (double x : r.episode_rewards) {
      c.rewards.push_back(x);
      c.env_steps.push_back(r.env_steps);
    }
  }
  if (c.env.empty()) throw InvalidInput("'" + path + "' holds no metrics records");
  c.smoothed = moving_average(c.rewards, window);
  return c;
}

inline std::string curves_csv(const std::vector<Curve>& curves) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "run,env,agent,episode,env_steps,reward,smoothed\n";
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < c.rewards.size(); ++i) {
      os << c.run << "," << c.env << "," << c.agent << "," << i + 1 << "," << c.env_steps[i] << "," << c.rewards[i]
         << "," << c.smoothed[i] << "\n";
    }
  }
  return os.str();
}

/// Line chart of smoothed reward against environment steps.
inline std::string curves_svg(const std::string& title, const std::vector<const Curve*>& curves,
                              const std::vector<std::string>& warnings) {
  constexpr double W = 640, H = 400, L = 60, R = 150, T = 30, B = 40;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  double x_max = 1, y_min = 0, y_max = 0;
  bool any = false;
  for (const auto* c : curves) {
    for (std::size_t i = 0; i < c->smoothed.size(); ++i) {
      x_max = std::max(x_max, static_cast<double>(c->env_steps[i]));
      y_min = any ? std::min(y_min, c->smoothed[i]) : c->smoothed[i];
      y_max = any ? std::max(y_max, c->smoothed[i]) : c->smoothed[i];
      any = true;
    }
  }
  if (y_max - y_min < 1e-9) {
    y_min -= 0.5;
    y_max += 0.5;
  }
  const auto px = [&](double x) { return L + (W - L - R) * x / x_max; };
  const auto py = [&](double y) { return H - B - (H - T - B) * (y - y_min) / (y_max - y_min); };

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  for (const auto& w : warnings) os << "<!-- warning: " << w << " -->\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << L << "\" y=\"20\" font-size=\"14\">" << title << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << L << "\" y=\"" << H - 10 << "\" font-size=\"11\">0</text>\n";
  os << "<text x=\"" << W - R - 40 << "\" y=\"" << H - 10 << "\" font-size=\"11\">" << std::setprecision(0) << x_max
     << " steps</text>\n"
     << std::setprecision(2);
  os << "<text x=\"5\" y=\"" << py(y_max) + 4 << "\" font-size=\"11\">" << y_max << "</text>\n";
  os << "<text x=\"5\" y=\"" << py(y_min) + 4 << "\" font-size=\"11\">" << y_min << "</text>\n";
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto* c = curves[k];
    const char* color = colors[k % std::size(colors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < c->smoothed.size(); ++i) {
      os << px(static_cast<double>(c->env_steps[i])) << "," << py(c->smoothed[i]) << " ";
    }
    os << "\"/>\n";
    os << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (k + 1) << "\" font-size=\"11\" fill=\"" << color
       << "\">" << c->run << " (" << c->agent << ")</text>\n";
  }
  for (std::size_t k = 0; k < warnings.size(); ++k) {
    os << "<text x=\"" << L << "\" y=\"" << T + 14 * (k + 1) << "\" font-size=\"10\" fill=\"#b00\">warning: "
       << warnings[k] << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

struct PlotArgs {
  std::vector<std::string> metrics_files;
  std::string out_dir;
  std::size_t window = 1000;
};

struct PlotResult {
  std::string csv_path;
  std::vector<std::string> image_paths;
  std::vector<std::string> warnings;
};

/// Writes <out>/curves.csv and one <out>/curves_<env>.svg per environment.
inline PlotResult run_plot(const PlotArgs& a) {
  if (a.metrics_files.empty()) throw InvalidInput("plot needs at least one metrics file");
  std::vector<Curve> curves;
  for (const auto& f : a.metrics_files) curves.push_back(load_curve(f, a.window));
  std::map<std::string, std::vector<const Curve*>> by_env;
  for (const auto& c : curves) by_env[c.env].push_back(&c);

  PlotResult res;
  if (by_env.size() > 1) {
    std::string envs;
    for (const auto& [env, _] : by_env) envs += (envs.empty() ? "" : ", ") + env;
    res.warnings.push_back("runs cover different environments (" + envs +
                           "); they are drawn on separate charts, not overlaid");
  }
  const fs::path out(a.out_dir);
  fs::create_directories(out);
  res.csv_path = (out / "curves.csv").string();
  write_text(res.csv_path, curves_csv(curves));
  for (const auto& [env, group] : by_env) {
    const fs::path img = out / ("curves_" + env + ".svg");
    write_text(img, curves_svg(env + ": mean reward over last " + std::to_string(a.window) + " episodes", group,
                               res.warnings));
    res.image_paths.push_back(img.string());
  }
  return res;
}

}  // namespace dpn::cli
