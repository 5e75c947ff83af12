#include "dho2/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>

namespace dho2 {

TrainerKind parse_trainer(std::string_view name) {
  if (name == "sgd") return TrainerKind::Sgd;
  if (name == "fosi") return TrainerKind::Fosi;
  if (name == "dho2") return TrainerKind::Dho2;
  throw ArgumentError("trainer: expected sgd|fosi|dho2, got '" + std::string(name) + "'");
}

std::string_view trainer_name(TrainerKind kind) {
  switch (kind) {
    case TrainerKind::Sgd: return "sgd";
    case TrainerKind::Fosi: return "fosi";
    case TrainerKind::Dho2: return "dho2";
  }
  return "?";
}

std::optional<double> TrainResult::final_accuracy() const {
  if (metrics.empty() || std::isnan(metrics.back().train_acc)) return std::nullopt;
  return metrics.back().train_acc;
}

std::optional<std::size_t> TrainResult::epochs_to_loss(double target) const {
  for (const auto& row : metrics) {
    if (row.train_loss <= target) return static_cast<std::size_t>(row.epoch) + 1;
  }
  return std::nullopt;
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Per-worker training loop. One instance per rank; all replicated state
/// (parameters, optimizer moments, metrics inputs) evolves identically on
/// every rank because every cross-worker value flows through collectives.
class TrainerRun {
 public:
  TrainerRun(const TrainerConfig& cfg, const Problem& problem, Worker& worker, CommLedger* ledger)
      : cfg_(cfg),
        oracle_(*problem.oracle),
        dataset_(problem.dataset),
        worker_(worker),
        ledger_(ledger),
        n_(problem.oracle->dim()),
        base_(cfg.base, problem.oracle->dim()),
        w_(problem.w0),
        full_batch_(problem.dataset.full_batch()) {
    if (w_.size() != n_) throw DimensionError("train: w0 length != oracle dimension");
    const std::size_t samples = dataset_.size();
    const auto world = static_cast<std::size_t>(worker_.size());
    if (samples < world) throw ArgumentError("train: fewer samples than workers");
    sample_shard_ = Shard::for_rank(samples, worker_.size(), worker_.rank());
    const std::size_t max_shard = Shard::for_rank(samples, worker_.size(), 0).len();
    rounds_per_epoch_ = (max_shard + cfg_.batch_size - 1) / cfg_.batch_size;
    memory_.record("w", static_cast<std::int64_t>(n_));
    memory_.record("moments", base_.moment_slots());
  }

  void run() {
    switch (cfg_.kind) {
      case TrainerKind::Sgd: run_first_order(); break;
      case TrainerKind::Fosi: run_fosi(); break;
      case TrainerKind::Dho2: run_dho2(); break;
    }
  }

  const std::vector<MetricsRow>& metrics() const { return metrics_; }
  const Vector& final_params() const { return final_w_; }
  const SlotMeter& memory() const { return memory_; }
  std::int64_t gs_flops() const { return gs_flops_; }
  std::size_t refreshes() const { return refreshes_; }
  std::size_t safeguard_passes() const { return safeguard_passes_; }

 private:
  // mean gradient over the global batch: each worker contributes the mean
  // over its own sub-batch, reduced and scaled by 1/C
  Vector mean_gradient(const Vector& at, const std::vector<std::size_t>& perm, std::size_t round) {
    const std::size_t len = sample_shard_.len();
    std::vector<std::size_t> idx(cfg_.batch_size);
    for (std::size_t j = 0; j < cfg_.batch_size; ++j) {
      const std::size_t pos = sample_shard_.begin + (round * cfg_.batch_size + j) % len;
      idx[j] = perm[pos];
    }
    const Vector local = oracle_.grad(at, dataset_.batch(idx));
    Vector g = worker_.all_reduce_sum(local);
    linalg::scale(g, 1.0 / static_cast<double>(worker_.size()));
    return g;
  }

  EseResult refresh_ese(const Vector& at) {
    // shared curvature batch, identical on every rank, held fixed for the
    // whole refresh so all m iterations see one operator
    const std::size_t want = std::min<std::size_t>(cfg_.curvature_batch, dataset_.size());
    std::vector<std::size_t> idx(dataset_.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(mix_seed(cfg_.seed, 0xc0ffee + refreshes_));
    rng.shuffle(idx);
    idx.resize(want);
    const Batch curv = dataset_.batch(idx);

    const HvpFn hvp = [&](const Vector& v) { return oracle_.hvp(at, v, curv); };
    const std::size_t m = lanczos_budget(cfg_.k, cfg_.l, n_);
    DistLanczosOptions opts;
    opts.lanczos = cfg_.lanczos;
    opts.hash_checks = cfg_.debug_hash_checks;
    auto state =
        lanczos_distributed(worker_, m, hvp, n_, mix_seed(cfg_.seed, 0xbeef + refreshes_), opts);

    // breakdown can leave fewer Ritz pairs than requested
    const std::size_t k_eff = std::min(cfg_.k, state.iterations);
    const std::size_t l_eff = std::min(cfg_.l, state.iterations - k_eff);
    EseResult ese =
        extract_ese_distributed(worker_, state, k_eff, l_eff, &memory_, cfg_.debug_hash_checks);

    gs_flops_ += state.gs_flops;
    safeguard_passes_ += state.safeguard_passes;
    memory_.merge(state.memory);
    ++refreshes_;
    return ese;
  }

  double modeled_ms() const {
    const double world = static_cast<double>(worker_.size());
    double comm_ms = 0.0;
    if (ledger_ != nullptr) {
      const double bytes = static_cast<double>(ledger_->totals().floats_sent) * 8.0;
      const double bytes_per_ms = cfg_.model_bandwidth_gbps * 1.25e5;  // Gbit/s -> bytes/ms
      comm_ms = bytes / (bytes_per_ms * world);
    }
    const double flops_per_ms = cfg_.model_gflops * 1e6;
    const double flop_ms = static_cast<double>(gs_flops_) / (flops_per_ms * world);
    return comm_ms + flop_ms;
  }

  void epoch_end(const Vector& at, std::int64_t outer, std::int64_t inner, std::int64_t epoch,
                 bool refreshed, const Vector* residual_against) {
    const double loss = oracle_.value(at, full_batch_);
    if (!std::isfinite(loss)) {
      throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + " (trainer " +
                             std::string(trainer_name(cfg_.kind)) + ")");
    }
    if (cfg_.debug_hash_checks && !worker_.all_equal(bits_hash(at))) {
      throw DivergenceError("train: parameter replicas diverged at epoch " + std::to_string(epoch));
    }
    MetricsRow row;
    row.outer_k = outer;
    row.inner_l = inner;
    row.epoch = epoch;
    row.train_loss = loss;
    if (const auto acc = oracle_.accuracy(at, full_batch_)) row.train_acc = *acc;
    if (residual_against != nullptr) {
      row.residual_norm = linalg::norm2(linalg::sub(at, *residual_against));
    }
    row.wallclock_ms = modeled_ms();
    row.ese_refresh = refreshed;
    metrics_.push_back(row);
  }

  void run_first_order() {
    for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
      const auto perm = dataset_.epoch_permutation(epoch);
      for (std::size_t r = 0; r < rounds_per_epoch_; ++r) {
        const Vector g = mean_gradient(w_, perm, r);
        const Vector step = base_.step(g, w_);
        linalg::axpy(1.0, step, w_);
      }
      epoch_end(w_, -1, -1, static_cast<std::int64_t>(epoch), false, nullptr);
    }
    final_w_ = w_;
  }

  void run_fosi() {
    const bool curvature = cfg_.k + cfg_.l > 0;
    const std::size_t interval =
        cfg_.refresh_interval > 0 ? cfg_.refresh_interval : rounds_per_epoch_;
    EseResult ese;
    std::size_t iter = 0;
    for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
      const auto perm = dataset_.epoch_permutation(epoch);
      bool refreshed = false;
      for (std::size_t r = 0; r < rounds_per_epoch_; ++r, ++iter) {
        if (curvature && iter % interval == 0) {
          ese = refresh_ese(w_);
          refreshed = true;
        }
        const Vector g = mean_gradient(w_, perm, r);
        Deltas d = fosi_deltas(g, ese, base_, w_, cfg_.alpha, cfg_.eigval_floor);
        linalg::axpy(1.0, d.base, w_);
        if (ese.count() > 0) linalg::axpy(1.0, d.newton, w_);
      }
      epoch_end(w_, -1, -1, static_cast<std::int64_t>(epoch), refreshed, nullptr);
    }
    final_w_ = w_;
  }

  void run_dho2() {
    const bool curvature = cfg_.k + cfg_.l > 0;
    const bool reduction = cfg_.sigma_zero_reduction;
    if (!reduction && cfg_.sigma <= 0.0) throw ArgumentError("dho2: sigma must be positive");

    AdmmState st = make_admm_state(w_, reduction ? 1.0 : cfg_.sigma);
    const double sigma_eff = reduction ? 0.0 : cfg_.sigma;

    for (std::size_t k_outer = 0; k_outer < cfg_.outer_rounds; ++k_outer) {
      EseResult ese;
      if (curvature) ese = refresh_ese(st.w_a);
      if (reduction) {
        st.w = st.w_a;
      } else {
        admm_w_update(st);
      }
      st.w_a = st.w;  // inner loop starts from the new primal point

      for (std::size_t l_inner = 0; l_inner < cfg_.inner_epochs; ++l_inner) {
        const std::int64_t epoch =
            static_cast<std::int64_t>(k_outer * cfg_.inner_epochs + l_inner);
        const auto perm = dataset_.epoch_permutation(static_cast<std::uint64_t>(epoch));
        for (std::size_t r = 0; r < rounds_per_epoch_; ++r) {
          const Vector g = mean_gradient(st.w_a, perm, r);
          // under the reduction flag the call collapses to the fosi step, so
          // the two trainers match bit for bit
          Deltas d = reduction ? fosi_deltas(g, ese, base_, st.w_a, cfg_.alpha, cfg_.eigval_floor)
                               : admm_deltas(g, st.pi, ese, base_, st.w_a, cfg_.alpha, sigma_eff,
                                             cfg_.eigval_floor);
          linalg::axpy(1.0, d.base, st.w_a);
          if (ese.count() > 0) linalg::axpy(1.0, d.newton, st.w_a);
        }
        epoch_end(st.w_a, static_cast<std::int64_t>(k_outer), static_cast<std::int64_t>(l_inner),
                  epoch, l_inner == 0 && curvature, &st.w);
      }
      if (!reduction) admm_dual_update(st);
    }
    final_w_ = st.w_a;
  }

  const TrainerConfig& cfg_;
  const Oracle& oracle_;
  const Dataset& dataset_;
  Worker& worker_;
  CommLedger* ledger_;
  const std::size_t n_;
  BaseOptimizer base_;
  Vector w_;
  Batch full_batch_;
  Shard sample_shard_;
  std::size_t rounds_per_epoch_ = 0;

  std::vector<MetricsRow> metrics_;
  Vector final_w_;
  SlotMeter memory_;
  std::int64_t gs_flops_ = 0;
  std::size_t refreshes_ = 0;
  std::size_t safeguard_passes_ = 0;
};

}  // namespace

TrainResult train(const TrainerConfig& cfg, const Problem& problem, int workers,
                  const Schedule& schedule, CommLedger* ledger) {
  if (!problem.oracle) throw ArgumentError("train: missing oracle");
  if (cfg.batch_size == 0) throw ArgumentError("train: batch_size must be >= 1");

  TrainResult result;
  result.memory.resize(static_cast<std::size_t>(workers));
  const auto t0 = std::chrono::steady_clock::now();

  run_workers(workers, schedule, ledger, [&](Worker& worker) {
    TrainerRun run(cfg, problem, worker, ledger);
    run.run();
    result.memory[static_cast<std::size_t>(worker.rank())] = run.memory();
    if (worker.rank() == 0) {
      result.metrics = run.metrics();
      result.w_final = run.final_params();
      result.gs_flops = run.gs_flops();
      result.ese_refreshes = run.refreshes();
      result.safeguard_passes = run.safeguard_passes();
    }
  });

  const auto t1 = std::chrono::steady_clock::now();
  result.raw_wallclock_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  return result;
}

}  // namespace dho2
