#include "dho2/collectives.hpp"

#include <algorithm>
#include <thread>

#include "dho2/errors.hpp"

namespace dho2 {

Shard Shard::for_rank(std::size_t n, int world_size, int rank) {
  if (world_size < 1) throw ArgumentError("Shard: world_size must be >= 1");
  if (rank < 0 || rank >= world_size) throw ArgumentError("Shard: rank out of range");
  const std::size_t base = (n + static_cast<std::size_t>(world_size) - 1) / world_size;
  Shard s;
  s.rank = rank;
  s.total = n;
  s.begin = std::min(base * static_cast<std::size_t>(rank), n);
  s.end = std::min(s.begin + base, n);
  return s;
}

Schedule parse_schedule(std::string_view name, std::uint64_t seed) {
  if (name == "concurrent") return Schedule::concurrent();
  if (name == "round_robin") return Schedule::round_robin();
  if (name == "random") return Schedule::random_order(seed);
  throw ArgumentError("schedule: expected concurrent|round_robin|random, got '" +
                      std::string(name) + "'");
}

void CommLedger::append(std::vector<Row> rows) {
  std::lock_guard lk(mu_);
  for (auto& r : rows) {
    floats_sent_ += r.sent;
    rows_.push_back(std::move(r));
  }
}

std::vector<CommLedger::Row> CommLedger::rows() const {
  std::lock_guard lk(mu_);
  return rows_;
}

CommLedger::Totals CommLedger::totals() const {
  std::lock_guard lk(mu_);
  return {next_event_, floats_sent_};
}

std::int64_t CommLedger::next_event_index() {
  std::lock_guard lk(mu_);
  return next_event_++;
}

void CommLedger::clear() {
  std::lock_guard lk(mu_);
  rows_.clear();
  next_event_ = 0;
  floats_sent_ = 0;
}

namespace {

enum class WorkerStatus { Ready, Blocked, Done };

constexpr std::uint64_t kNoMeta = ~0ULL;

// Thrown on ranks that are torn down because some other rank already failed;
// never surfaces to callers.
struct GroupAborted {};

}  // namespace

/// Coordination state shared by the worker threads of one run.
class WorkerGroup {
 public:
  WorkerGroup(int world_size, const Schedule& schedule, CommLedger* ledger)
      : size_(world_size),
        schedule_(schedule),
        ledger_(ledger),
        sched_rng_(schedule.seed ^ 0x5c5c5c5c5c5c5c5cULL),
        status_(static_cast<std::size_t>(world_size), WorkerStatus::Ready),
        deposits_(static_cast<std::size_t>(world_size)),
        meta_(static_cast<std::size_t>(world_size)) {}

  void run(const WorkerBody& body) {
    {
      std::lock_guard lk(mu_);
      if (serialized()) pick_next_locked();
    }
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(size_));
    for (int r = 0; r < size_; ++r) {
      threads.emplace_back([this, r, &body] { worker_main(r, body); });
    }
    for (auto& t : threads) t.join();
    if (primary_error_) std::rethrow_exception(primary_error_);
    if (deadlock_) {
      throw DeadlockError("collective round never completed: a rank is missing");
    }
  }

  int size() const noexcept { return size_; }

  // --- collective entry points (called from Worker) ---

  Vector all_gather(int rank, const Vector& local, const Shard& shard) {
    if (local.size() != shard.len()) {
      fail(std::make_exception_ptr(DimensionError("all_gather: local length != shard length")));
    }
    auto res = collective(rank, "all_gather", static_cast<std::int64_t>(shard.total), local,
                          {shard.begin, shard.end, shard.total});
    return res.payload;
  }

  Vector all_reduce_sum(int rank, const Vector& local) {
    auto res = collective(rank, "all_reduce", static_cast<std::int64_t>(local.size()), local,
                          {local.size(), kNoMeta, kNoMeta});
    return res.payload;
  }

  Vector broadcast_vec(int rank, const Vector& payload, int root) {
    if (root < 0 || root >= size_) {
      fail(std::make_exception_ptr(ArgumentError("broadcast: invalid root rank")));
    }
    auto res = collective(rank, "broadcast", root, rank == root ? payload : Vector{},
                          {rank == root ? payload.size() : kNoMeta, kNoMeta, kNoMeta});
    return res.payload;
  }

  TallMatrix broadcast_mat(int rank, const TallMatrix& payload, int root) {
    if (root < 0 || root >= size_) {
      fail(std::make_exception_ptr(ArgumentError("broadcast: invalid root rank")));
    }
    Vector flat;
    std::array<std::uint64_t, 3> meta{kNoMeta, kNoMeta, kNoMeta};
    if (rank == root) {
      flat = payload.data();
      meta = {payload.rows(), payload.cols(), kNoMeta};
    }
    auto res = collective(rank, "broadcast_mat", root, flat, meta);
    TallMatrix out(res.meta[0], res.meta[1]);
    out.data() = std::move(res.payload);
    return out;
  }

  TallMatrix gather_rows(int rank, const TallMatrix& block, const Shard& shard) {
    if (block.rows() != shard.len()) {
      fail(std::make_exception_ptr(DimensionError("gather_rows: block rows != shard length")));
    }
    auto res = collective(rank, "vhat_assembly", static_cast<std::int64_t>(shard.total),
                          block.data(), {shard.begin, shard.end, block.cols()});
    TallMatrix out(shard.total, res.meta[0]);
    out.data() = std::move(res.payload);
    return out;
  }

  bool all_equal(int rank, std::uint64_t value) {
    auto res = collective(rank, "hash_check", 0, Vector{}, {value, kNoMeta, kNoMeta});
    return res.meta[0] == 1;
  }

 private:
  struct CombineResult {
    Vector payload;
    std::array<std::uint64_t, 3> meta{};
  };

  bool serialized() const noexcept { return schedule_.kind != ScheduleKind::Concurrent; }

  void worker_main(int rank, const WorkerBody& body) {
    try {
      wait_for_turn(rank);
      Worker w(this, rank);
      body(w);
    } catch (const GroupAborted&) {
      // secondary teardown; primary error already recorded
    } catch (...) {
      std::lock_guard lk(mu_);
      if (!primary_error_) primary_error_ = std::current_exception();
      aborted_ = true;
      cv_.notify_all();
    }
    std::lock_guard lk(mu_);
    status_[static_cast<std::size_t>(rank)] = WorkerStatus::Done;
    if (serialized() && token_ == rank) pick_next_locked();
    cv_.notify_all();
  }

  void wait_for_turn(int rank) {
    if (!serialized()) return;
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return token_ == rank || aborted_; });
    if (aborted_) throw GroupAborted{};
  }

  [[noreturn]] void fail(std::exception_ptr err) {
    {
      std::lock_guard lk(mu_);
      if (!primary_error_) primary_error_ = err;
      aborted_ = true;
      cv_.notify_all();
    }
    throw GroupAborted{};
  }

  CombineResult collective(int rank, std::string_view op, std::int64_t tag, const Vector& payload,
                           std::array<std::uint64_t, 3> meta) {
    std::unique_lock lk(mu_);
    const auto urank = static_cast<std::size_t>(rank);
    if (aborted_) throw GroupAborted{};

    if (open_count_ == 0) {
      open_op_ = std::string(op);
      open_tag_ = tag;
    } else if (open_op_ != op) {
      fail_locked(std::make_exception_ptr(
          ArgumentError("collective mismatch: rank " + std::to_string(rank) + " called " +
                        std::string(op) + " while round is " + open_op_)));
    } else if (open_tag_ != tag) {
      // same op, inconsistent shape/root across ranks
      if (op == "broadcast" || op == "broadcast_mat") {
        fail_locked(std::make_exception_ptr(
            ArgumentError("broadcast: root differs across ranks")));
      }
      fail_locked(std::make_exception_ptr(
          DimensionError(std::string(op) + ": length differs across ranks")));
    }
    deposits_[urank] = payload;
    meta_[urank] = meta;
    ++open_count_;
    status_[urank] = WorkerStatus::Blocked;

    bool completed = false;
    if (open_count_ == size_) {
      try {
        combine_locked();
      } catch (...) {
        fail_locked(std::current_exception());
      }
      completed = true;
      open_count_ = 0;
      open_op_.clear();
      ++generation_;
      for (auto& s : status_) {
        if (s == WorkerStatus::Blocked) s = WorkerStatus::Ready;
      }
      if (serialized()) pick_next_locked();
      cv_.notify_all();
    } else if (serialized()) {
      pick_next_locked();
      cv_.notify_all();
    }

    const std::uint64_t target = completed ? result_gen_ : result_gen_ + 1;
    auto ready = [&] {
      return aborted_ || (result_gen_ >= target && (!serialized() || token_ == rank));
    };
    if (schedule_.kind == ScheduleKind::Concurrent) {
      if (!cv_.wait_for(lk, schedule_.timeout, ready)) {
        fail_locked(std::make_exception_ptr(
            DeadlockError("collective '" + std::string(op) + "' timed out on rank " +
                          std::to_string(rank) + ": a rank is missing from the round")));
      }
    } else {
      cv_.wait(lk, ready);
    }
    if (aborted_) throw GroupAborted{};
    return {result_, result_meta_};
  }

  // Assembles the round result in ascending rank order and writes the ledger
  // rows. Caller holds mu_.
  void combine_locked() {
    const auto c = static_cast<std::size_t>(size_);
    std::vector<CommLedger::Row> rows(c);
    std::int64_t logical_floats = 0;

    if (open_op_ == "all_gather" || open_op_ == "vhat_assembly") {
      const bool matrix = open_op_ == "vhat_assembly";
      const std::size_t total = static_cast<std::size_t>(open_tag_);
      const std::size_t cols = matrix ? meta_[0][2] : 1;
      std::size_t expect_begin = 0;
      for (std::size_t r = 0; r < c; ++r) {
        if (matrix && meta_[r][2] != cols) {
          throw DimensionError("vhat_assembly: column count differs across ranks");
        }
        if (meta_[r][0] != expect_begin || meta_[r][1] < meta_[r][0] || meta_[r][1] > total) {
          throw DimensionError(open_op_ + ": shards do not partition the index range");
        }
        expect_begin = meta_[r][1];
      }
      if (expect_begin != total) {
        throw DimensionError(open_op_ + ": shards do not cover the index range");
      }
      result_.assign(total * cols, 0.0);
      for (std::size_t r = 0; r < c; ++r) {
        const std::size_t begin = meta_[r][0];
        const std::size_t len = meta_[r][1] - begin;
        for (std::size_t j = 0; j < cols; ++j) {
          std::copy_n(deposits_[r].begin() + static_cast<std::ptrdiff_t>(j * len), len,
                      result_.begin() + static_cast<std::ptrdiff_t>(j * total + begin));
        }
      }
      result_meta_ = {cols, 0, 0};
      logical_floats = static_cast<std::int64_t>(total * cols);
      for (std::size_t r = 0; r < c; ++r) {
        const std::size_t len = (meta_[r][1] - meta_[r][0]) * cols;
        rows[r].sent = static_cast<std::int64_t>(len) * (size_ - 1);
        rows[r].received = static_cast<std::int64_t>(total * cols - len);
      }
    } else if (open_op_ == "all_reduce") {
      const std::size_t len = meta_[0][0];
      for (std::size_t r = 0; r < c; ++r) {
        if (meta_[r][0] != len) throw DimensionError("all_reduce: length differs across ranks");
      }
      result_ = deposits_[0];
      for (std::size_t r = 1; r < c; ++r) {
        for (std::size_t i = 0; i < len; ++i) result_[i] += deposits_[r][i];
      }
      result_meta_ = {len, 0, 0};
      logical_floats = static_cast<std::int64_t>(len);
      for (std::size_t r = 0; r < c; ++r) {
        rows[r].sent = static_cast<std::int64_t>(len) * (size_ - 1);
        rows[r].received = static_cast<std::int64_t>(len) * (size_ - 1);
      }
    } else if (open_op_ == "broadcast" || open_op_ == "broadcast_mat") {
      const auto root = static_cast<std::size_t>(open_tag_);
      result_ = deposits_[root];
      result_meta_ = open_op_ == "broadcast" ? std::array<std::uint64_t, 3>{result_.size(), 0, 0}
                                             : meta_[root];
      logical_floats = static_cast<std::int64_t>(result_.size());
      for (std::size_t r = 0; r < c; ++r) {
        rows[r].sent = r == root ? logical_floats * (size_ - 1) : 0;
        rows[r].received = r == root ? 0 : logical_floats;
      }
    } else if (open_op_ == "hash_check") {
      bool equal = true;
      for (std::size_t r = 1; r < c; ++r) equal = equal && meta_[r][0] == meta_[0][0];
      result_.clear();
      result_meta_ = {equal ? 1ULL : 0ULL, 0, 0};
      logical_floats = 1;
      for (std::size_t r = 0; r < c; ++r) {
        rows[r].sent = size_ - 1;
        rows[r].received = size_ - 1;
      }
    } else {
      throw ArgumentError("unknown collective op: " + open_op_);
    }

    result_gen_ = generation_ + 1;
    if (ledger_ != nullptr) {
      const std::int64_t event = ledger_->next_event_index();
      for (std::size_t r = 0; r < c; ++r) {
        rows[r].event = event;
        rows[r].op = open_op_;
        rows[r].floats = logical_floats;
        rows[r].rank = static_cast<int>(r);
      }
      ledger_->append(std::move(rows));
    }
    for (auto& d : deposits_) d.clear();
  }

  // Grants the token to the next runnable worker. Caller holds mu_.
  void pick_next_locked() {
    std::vector<int> ready;
    int done = 0;
    for (int r = 0; r < size_; ++r) {
      const auto s = status_[static_cast<std::size_t>(r)];
      if (s == WorkerStatus::Ready) ready.push_back(r);
      if (s == WorkerStatus::Done) ++done;
    }
    if (ready.empty()) {
      token_ = -1;
      if (done < size_ && !aborted_) {
        // Blocked workers remain but the round can never complete.
        aborted_ = true;
        deadlock_ = true;
        cv_.notify_all();
      }
      return;
    }
    if (schedule_.kind == ScheduleKind::RandomOrder) {
      token_ = ready[static_cast<std::size_t>(sched_rng_.uniform_below(ready.size()))];
    } else {
      token_ = ready.front();
      for (int step = 1; step <= size_; ++step) {
        const int cand = (last_token_ + step) % size_;
        if (status_[static_cast<std::size_t>(cand)] == WorkerStatus::Ready) {
          token_ = cand;
          break;
        }
      }
    }
    last_token_ = token_;
  }

  // Caller holds mu_.
  [[noreturn]] void fail_locked(std::exception_ptr err) {
    if (!primary_error_) primary_error_ = err;
    aborted_ = true;
    cv_.notify_all();
    throw GroupAborted{};
  }

  const int size_;
  const Schedule schedule_;
  CommLedger* const ledger_;
  Rng sched_rng_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<WorkerStatus> status_;
  std::exception_ptr primary_error_;
  bool aborted_ = false;
  bool deadlock_ = false;
  int token_ = -1;
  int last_token_ = -1;

  // one open round at a time (lockstep contract)
  std::string open_op_;
  std::int64_t open_tag_ = 0;
  int open_count_ = 0;
  std::vector<Vector> deposits_;
  std::vector<std::array<std::uint64_t, 3>> meta_;

  // last completed round
  Vector result_;
  std::array<std::uint64_t, 3> result_meta_{};
  std::uint64_t generation_ = 0;
  std::uint64_t result_gen_ = 0;
};

int Worker::size() const noexcept { return group_->size(); }

Vector Worker::all_gather(const Vector& local, const Shard& shard) {
  return group_->all_gather(rank_, local, shard);
}

Vector Worker::all_reduce_sum(const Vector& local) {
  return group_->all_reduce_sum(rank_, local);
}

double Worker::all_reduce_sum(double local) {
  return group_->all_reduce_sum(rank_, Vector{local})[0];
}

Vector Worker::broadcast(const Vector& payload, int root) {
  return group_->broadcast_vec(rank_, payload, root);
}

TallMatrix Worker::broadcast(const TallMatrix& payload, int root) {
  return group_->broadcast_mat(rank_, payload, root);
}

TallMatrix Worker::gather_rows(const TallMatrix& block, const Shard& shard) {
  return group_->gather_rows(rank_, block, shard);
}

bool Worker::all_equal(std::uint64_t value) { return group_->all_equal(rank_, value); }

void run_workers(int world_size, const Schedule& schedule, CommLedger* ledger,
                 const WorkerBody& body) {
  if (world_size < 1) throw ArgumentError("run_workers: world_size must be >= 1");
  WorkerGroup group(world_size, schedule, ledger);
  group.run(body);
}

}  // namespace dho2
