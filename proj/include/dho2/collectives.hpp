#pragma once

#include <array>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "dho2/linalg.hpp"
#include "dho2/rng.hpp"

namespace dho2 {

/// Contiguous row range [begin, end) owned by one rank out of a global
/// length-n index space. The first ranks hold ceil(n/C) rows, the last rank
/// the remainder.
struct Shard {
  int rank = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t total = 0;

  std::size_t len() const noexcept { return end - begin; }

  static Shard for_rank(std::size_t n, int world_size, int rank);
};

enum class ScheduleKind { Concurrent, RoundRobin, RandomOrder };

/// How the simulated workers are interleaved. Concurrent runs them as free
/// threads that rendezvous at each collective; the serialized kinds step one
/// worker at a time to its next collective, either in rank order or in a
/// seeded random order. All three must produce identical results.
struct Schedule {
  ScheduleKind kind = ScheduleKind::Concurrent;
  std::uint64_t seed = 0;
  std::chrono::milliseconds timeout{5000};

  static Schedule concurrent() { return {}; }
  static Schedule round_robin() { return {ScheduleKind::RoundRobin, 0, std::chrono::milliseconds(5000)}; }
  static Schedule random_order(std::uint64_t seed) {
    return {ScheduleKind::RandomOrder, seed, std::chrono::milliseconds(5000)};
  }
};

Schedule parse_schedule(std::string_view name, std::uint64_t seed);

/// Per-collective traffic record. One event per collective round, one row per
/// rank. `floats` is the logical payload of the round (the result length);
/// `sent`/`received` model rank-to-rank traffic, so totals balance.
class CommLedger {
 public:
  struct Row {
    std::int64_t event = 0;
    std::string op;
    std::int64_t floats = 0;
    int rank = 0;
    std::int64_t sent = 0;
    std::int64_t received = 0;
  };

  struct Totals {
    std::int64_t events = 0;
    std::int64_t floats_sent = 0;
  };

  void append(std::vector<Row> rows);
  std::vector<Row> rows() const;
  Totals totals() const;
  std::int64_t next_event_index();
  void clear();

 private:
  mutable std::mutex mu_;
  std::vector<Row> rows_;
  std::int64_t next_event_ = 0;
  std::int64_t floats_sent_ = 0;
};

class WorkerGroup;

/// Per-rank handle passed to the worker body. All cross-worker interaction
/// goes through these calls; each one is a synchronization barrier.
class Worker {
 public:
  int rank() const noexcept { return rank_; }
  int size() const noexcept;

  /// Every rank contributes its shard; all ranks get the assembled vector.
  Vector all_gather(const Vector& local, const Shard& shard);

  /// Element-wise sum accumulated in ascending rank order (bitwise
  /// deterministic); every rank gets the same result.
  Vector all_reduce_sum(const Vector& local);
  double all_reduce_sum(double local);

  /// Every rank gets a copy of root's payload.
  Vector broadcast(const Vector& payload, int root);
  TallMatrix broadcast(const TallMatrix& payload, int root);

  /// Row-block concatenation: rank r contributes rows [shard.begin,
  /// shard.end) of an n x cols matrix; all ranks get the full matrix.
  TallMatrix gather_rows(const TallMatrix& block, const Shard& shard);

  /// True on every rank iff all ranks passed the same value.
  bool all_equal(std::uint64_t value);

 private:
  friend class WorkerGroup;
  Worker(WorkerGroup* group, int rank) : group_(group), rank_(rank) {}
  WorkerGroup* group_;
  int rank_;
};

using WorkerBody = std::function<void(Worker&)>;

/// Runs `body` on `world_size` simulated workers under the given schedule.
/// Collective traffic is recorded into `ledger` when non-null. Rethrows the
/// lowest-rank worker error, if any.
void run_workers(int world_size, const Schedule& schedule, CommLedger* ledger,
                 const WorkerBody& body);

}  // namespace dho2
