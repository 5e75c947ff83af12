#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dho2/trainer.hpp"

namespace dho2 {

struct ProblemConfig {
  std::string kind = "quadratic";  // quadratic | mlp

  // quadratic
  std::size_t n = 100;
  double condition = 1e4;     // log-spaced spectrum, 10^-c/2 .. 10^c/2
  std::uint64_t rotation_seed = 1;
  std::string spectrum;       // optional explicit comma-separated eigenvalues

  // mlp
  std::string dataset = "two-gaussians";  // synthetic kind, or csv
  std::string csv_path;
  std::string label_col = "label";
  std::vector<std::string> feature_cols;  // empty = all non-label columns
  std::size_t samples = 400;
  std::uint64_t dataset_seed = 7;
  std::vector<std::size_t> layers = {2, 16, 2};
  std::string activation = "tanh";
  std::string loss = "softmax_ce";
};

struct ExperimentConfig {
  std::string trainer = "dho2";
  int workers = 1;
  std::uint64_t seed = 1;
  std::string schedule = "concurrent";
  std::string out_dir = "out";
  double loss_target = 1e-6;
  ProblemConfig problem;
  TrainerConfig train;
};

/// Flat key-value format with [sections]; '#' starts a comment. Unknown keys
/// are usage errors that name the offending field.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin);

Problem build_problem(const ExperimentConfig& cfg);
TrainerConfig build_trainer_config(const ExperimentConfig& cfg);

struct RunPaths {
  std::filesystem::path metrics_csv;
  std::filesystem::path ledger_csv;
  std::filesystem::path memory_csv;
  std::filesystem::path summary_json;

  static RunPaths in_dir(const std::filesystem::path& dir);
};

/// Runs the experiment and writes metrics.csv, ledger.csv, memory.csv and
/// summary.json into cfg.out_dir. Returns 0 on success, 2 when training
/// aborted on a non-finite loss (a diagnostic summary is still written).
int run_experiment(const ExperimentConfig& cfg);

/// Per-worker peak D-shard slots against the ceil(n/C)*(m+1) bound; several
/// run directories give the sharding-scaling view.
std::string memory_report(const std::vector<std::string>& run_dirs);

/// Collective counts per ESE refresh and per epoch against the expected
/// pattern, plus the sent == received conservation check.
std::string comm_report(const std::string& run_dir);

std::string format_double(double x);

}  // namespace dho2
