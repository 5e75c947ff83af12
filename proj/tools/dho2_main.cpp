#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dho2/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"DHO2: distributed hybrid-order optimization over simulated workers"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "run an experiment from a config file");
  std::string config_path;
  std::string trainer_override;
  std::string out_override;
  std::string schedule_override;
  int workers_override = -1;
  std::int64_t seed_override = -1;
  run->add_option("--config", config_path, "experiment config file")->required();
  run->add_option("--trainer", trainer_override, "sgd|fosi|dho2 (overrides config)");
  run->add_option("--workers", workers_override, "simulated worker count (overrides config)");
  run->add_option("--seed", seed_override, "seed (overrides config)");
  run->add_option("--out", out_override, "output directory (overrides config)");
  run->add_option("--schedule", schedule_override,
                  "concurrent|round_robin|random (overrides config)");

  // report
  auto* report = app.add_subcommand("report", "inspect run artifacts");
  report->require_subcommand(1);
  auto* mem = report->add_subcommand("memory", "per-worker peak slot accounting");
  std::vector<std::string> mem_dirs;
  mem->add_option("--in", mem_dirs, "run directory (repeat for a worker-count sweep)")
      ->required();
  auto* comm = report->add_subcommand("comm", "collective-operation counts");
  std::string comm_dir;
  comm->add_option("--in", comm_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      dho2::ExperimentConfig cfg = dho2::load_config(config_path);
      if (!trainer_override.empty()) cfg.trainer = trainer_override;
      if (workers_override > 0) cfg.workers = workers_override;
      if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
      if (!out_override.empty()) cfg.out_dir = out_override;
      if (!schedule_override.empty()) cfg.schedule = schedule_override;
      const int status = dho2::run_experiment(cfg);
      if (status == 0) {
        std::printf("run complete: artifacts in %s\n", cfg.out_dir.c_str());
      } else {
        std::fprintf(stderr, "run aborted: see %s/summary.json\n", cfg.out_dir.c_str());
      }
      return status;
    }
    if (mem->parsed()) {
      std::fputs(dho2::memory_report(mem_dirs).c_str(), stdout);
      return 0;
    }
    if (comm->parsed()) {
      std::fputs(dho2::comm_report(comm_dir).c_str(), stdout);
      return 0;
    }
  } catch (const dho2::ArgumentError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
