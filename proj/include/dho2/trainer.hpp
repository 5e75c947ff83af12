#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dho2/accounting.hpp"
#include "dho2/collectives.hpp"
#include "dho2/dist_lanczos.hpp"
#include "dho2/optimizer.hpp"
#include "dho2/oracle.hpp"

namespace dho2 {

enum class TrainerKind { Sgd, Fosi, Dho2 };

TrainerKind parse_trainer(std::string_view name);
std::string_view trainer_name(TrainerKind kind);

/// The training loop hit a non-finite loss and stopped.
struct TrainingDiverged : NumericError {
  using NumericError::NumericError;
};

struct TrainerConfig {
  TrainerKind kind = TrainerKind::Dho2;
  BaseConfig base;

  // curvature (fosi, dho2); k == l == 0 disables the second-order path
  std::size_t k = 8;
  std::size_t l = 0;
  double alpha = 0.1;
  double eigval_floor = 1e-6;
  std::size_t refresh_interval = 0;   // fosi: batch iterations between ESE refreshes; 0 = once per epoch
  std::size_t curvature_batch = 512;  // samples for the shared hvp batch
  LanczosOptions lanczos;

  // admm (dho2)
  double sigma = 1e-2;
  std::size_t outer_rounds = 25;  // K
  std::size_t inner_epochs = 4;   // P
  /// Test flag: drops the sigma terms and the dual update so dho2 reduces
  /// exactly to the fosi trainer.
  bool sigma_zero_reduction = false;

  // loop
  std::size_t epochs = 100;     // sgd, fosi
  std::size_t batch_size = 16;  // per worker
  std::uint64_t seed = 1;

  bool debug_hash_checks = false;

  // deterministic time model for the reported clock
  double model_bandwidth_gbps = 50.0;
  double model_gflops = 10.0;
};

struct Problem {
  std::shared_ptr<const Oracle> oracle;
  Dataset dataset;
  Vector w0;
};

/// One record per inner epoch. train_acc/residual_norm are NaN where the
/// trainer has no such quantity; wallclock_ms is the deterministic modeled
/// clock (communication volume + Gram-Schmidt flops), not a measured time.
struct MetricsRow {
  std::int64_t outer_k = -1;
  std::int64_t inner_l = -1;
  std::int64_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = std::numeric_limits<double>::quiet_NaN();
  double residual_norm = std::numeric_limits<double>::quiet_NaN();
  double wallclock_ms = 0.0;
  bool ese_refresh = false;
};

struct TrainResult {
  Vector w_final;
  std::vector<MetricsRow> metrics;
  std::vector<SlotMeter> memory;  // per rank
  std::int64_t gs_flops = 0;
  std::size_t ese_refreshes = 0;
  std::size_t safeguard_passes = 0;
  double raw_wallclock_ms = 0.0;  // measured; excluded from determinism guarantees

  double final_loss() const { return metrics.empty() ? 0.0 : metrics.back().train_loss; }
  std::optional<double> final_accuracy() const;

  /// First epoch whose full-dataset loss is <= target.
  std::optional<std::size_t> epochs_to_loss(double target) const;
};

TrainResult train(const TrainerConfig& cfg, const Problem& problem, int workers,
                  const Schedule& schedule, CommLedger* ledger);

}  // namespace dho2
