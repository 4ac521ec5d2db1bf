// fessnc: train neural SDE controllers, wrap them with the closed-form
// projection operators, and validate by Monte Carlo simulation.

#include <CLI11.hpp>

#include "fessnc/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"fessnc: exponentially stable and safe neural controllers for SDEs"};
  app.require_subcommand(1);

  fessnc::cli::CommandOptions opts;
  std::uint64_t seed_value = 0;
  bool seed_given = false;
  std::string bench_system;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    if (needs_config) {
      cmd->add_option("--config", opts.config_path, "JSON config file")->required();
    }
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_option("--seed", seed_value, "seed override")->each([&](const std::string&) {
      seed_given = true;
    });
    cmd->add_option("--workers", opts.workers, "rollout worker pool size (default: cores)");
  };

  CLI::App* train = app.add_subcommand("train", "train controller, potential and class-K nets");
  add_common(train, true);
  CLI::App* check = app.add_subcommand("project-check", "sample generator residuals before/after projection");
  add_common(check, true);
  CLI::App* simulate = app.add_subcommand("simulate", "seeded Euler-Maruyama rollouts + metrics");
  add_common(simulate, true);
  CLI::App* bench = app.add_subcommand("bench", "full pipeline with per-system defaults");
  bench->add_option("system", bench_system, "gbm | double_pendulum | bicycle | fhn | three_link")
      ->required();
  add_common(bench, false);

  CLI11_PARSE(app, argc, argv);
  if (seed_given) opts.seed_override = seed_value;

  if (app.got_subcommand(train)) return fessnc::cli::cmd_train(opts);
  if (app.got_subcommand(check)) return fessnc::cli::cmd_project_check(opts);
  if (app.got_subcommand(simulate)) return fessnc::cli::cmd_simulate(opts);
  if (app.got_subcommand(bench)) return fessnc::cli::cmd_bench(bench_system, opts);
  return fessnc::cli::kExitConfig;
}
