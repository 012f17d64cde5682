#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dpn/cli/commands.hpp"

int main(int argc, char** argv) {
  using namespace dpn::cli;
  CLI::App app{"Dynamic Planning Network: train, evaluate and analyse planning agents"};
  app.require_subcommand(1);

  TrainArgs train_args;
  std::uint64_t train_seed = 0;
  auto* train = app.add_subcommand("train", "Train a DPN or A2C agent");
  train->add_option("--config", train_args.config_path, "Config file (key = value lines)")->required();
  train->add_option("--out", train_args.out_dir, "Output directory")->required();
  auto* train_seed_opt = train->add_option("--seed", train_seed, "Override the config seed");
  train->add_option("--override", train_args.overrides, "key=value, repeatable");
  train->add_flag("--resume", train_args.resume, "Continue from <out>/checkpoint.bin");
  train->add_flag("--sequential", train_args.sequential, "Collect workers on one thread");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint file")->required();
  eval->add_option("--episodes", eval_args.episodes, "Episode count");
  eval->add_flag("--greedy", eval_args.greedy, "Take the most likely action");
  eval->add_option("--seed", eval_args.seed, "Evaluation seed");
  eval->add_option("--config", eval_args.config_path, "Config to check the checkpoint against");
  eval->add_option("--override", eval_args.overrides, "key=value, repeatable");

  TraceArgs trace_args;
  auto* trace = app.add_subcommand("trace", "Record plan traces from a DPN checkpoint");
  trace->add_option("--checkpoint", trace_args.checkpoint, "Checkpoint file")->required();
  trace->add_option("--out", trace_args.out_path, "Trace file (one record per line)")->required();
  trace->add_option("--episodes", trace_args.episodes, "Episode count");
  trace->add_flag("--greedy", trace_args.greedy, "Take the most likely action");
  trace->add_option("--seed", trace_args.seed, "Seed");
  trace->add_option("--override", trace_args.overrides, "key=value, repeatable");

  std::string patterns_file;
  auto* patterns = app.add_subcommand("patterns", "Count planning patterns in a trace file");
  patterns->add_option("file", patterns_file, "Trace file")->required();

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "Compare transition counts per acting step");
  bench->add_option("--actions", bench_args.actions, "Action count |A|");
  bench->add_option("--depth", bench_args.depth, "Exhaustive tree depth");
  bench->add_option("--T", bench_args.T, "DPN planning steps");
  bench->add_option("--L", bench_args.L, "Rollout length");

  PlotArgs plot_args;
  auto* plot = app.add_subcommand("plot", "Smoothed training curves (CSV and SVG)");
  plot->add_option("metrics", plot_args.metrics_files, "Metrics files")->required();
  plot->add_option("--out", plot_args.out_dir, "Output directory")->required();
  plot->add_option("--window", plot_args.window, "Moving-average window in episodes");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      if (*train_seed_opt) train_args.seed = train_seed;
      const auto r = run_train(train_args, std::cout);
      std::cout << "done: " << r.env_steps << " steps, " << r.episodes << " episodes\n";
    } else if (eval->parsed()) {
      std::cout << to_json_line(run_eval(eval_args)) << "\n";
    } else if (trace->parsed()) {
      std::cout << run_trace(trace_args) << " traces written to " << trace_args.out_path << "\n";
    } else if (patterns->parsed()) {
      const auto pc = run_patterns(patterns_file);
      for (const auto& e : pc.errors) std::cerr << patterns_file << ": " << e << "\n";
      std::cout << format_patterns(pc);
      return pc.errors.empty() ? 0 : 1;
    } else if (bench->parsed()) {
      std::cout << format_bench(bench_args, run_bench(bench_args));
    } else if (plot->parsed()) {
      const auto r = run_plot(plot_args);
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
      std::cout << r.csv_path << "\n";
      for (const auto& p : r.image_paths) std::cout << p << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
