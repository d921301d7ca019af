#include <CLI11.hpp>

#include "tvio/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"trifocal visual-inertial odometry toolkit"};
  app.require_subcommand(1);

  std::string config, input, out, mode;
  std::uint64_t seed = 1;
  int runs = 0;
  double segment_len = 0.0;

  auto* c_sim = app.add_subcommand(
      "simulate", "synthesize a corridor scenario bundle");
  c_sim->add_option("--config", config, "JSON config; omitted = defaults");
  c_sim->add_option("--out", out, "bundle output directory")->required();
  c_sim->add_option("--seed", seed, "override the scenario seed");

  auto* c_run = app.add_subcommand(
      "run", "estimate a trajectory from a bundle or KITTI sequence");
  c_run->add_option("--config", config, "JSON config; omitted = defaults");
  c_run->add_option("--input", input, "scenario bundle or KITTI directory")
      ->required();
  c_run->add_option("--out", out, "output directory")->required();
  c_run->add_option("--seed", seed, "filter RNG seed");
  c_run->add_option("--mode", mode, "confidence mode: off, literal, inverted");

  auto* c_eval = app.add_subcommand(
      "eval", "score <out>/trajectory.csv against the input's ground truth");
  c_eval->add_option("--config", config, "JSON config; omitted = defaults");
  c_eval->add_option("--input", input, "ground-truth source directory")
      ->required();
  c_eval->add_option("--out", out, "directory holding trajectory.csv")
      ->required();
  c_eval->add_option("--segment-len", segment_len, "segment length in meters");

  auto* c_stats = app.add_subcommand(
      "stats", "angle/depth histogram and correlation for a bundle");
  c_stats->add_option("--input", input, "scenario bundle directory")
      ->required();
  c_stats->add_option("--out", out, "output directory")->required();

  auto* c_mc = app.add_subcommand(
      "mc", "paired Monte Carlo sweep over all confidence modes");
  c_mc->add_option("--config", config, "JSON config; omitted = defaults");
  c_mc->add_option("--out", out, "output directory")->required();
  c_mc->add_option("--seed", seed, "base seed; run i uses seed + i");
  c_mc->add_option("--runs", runs, "number of paired runs");
  c_mc->add_option("--segment-len", segment_len, "segment length in meters");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : tvio::cli::kExitInput;
  }

  if (*c_sim) {
    std::optional<std::uint64_t> seed_override;
    if (c_sim->count("--seed") > 0) seed_override = seed;
    return tvio::cli::cmd_simulate(config, out, seed_override);
  }
  if (*c_run) {
    tvio::cli::RunManifest m;
    m.input = input;
    m.config = config;
    m.out = out;
    m.seed = seed;
    m.mode = mode;
    return tvio::cli::cmd_run(m);
  }
  if (*c_eval) {
    tvio::cli::RunManifest m;
    m.input = input;
    m.config = config;
    m.out = out;
    return tvio::cli::cmd_eval(m, segment_len);
  }
  if (*c_stats) return tvio::cli::cmd_stats(input, out);
  if (*c_mc) return tvio::cli::cmd_mc(config, out, runs, seed, segment_len);
  return tvio::cli::kExitInput;
}
