#include "dho2/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace dho2 {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

/// Sectioned key-value store that tracks key consumption so leftovers can be
/// reported as usage errors with the exact field name.
class KvConfig {
 public:
  KvConfig(const std::string& text, const std::string& origin) : origin_(origin) {
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string t = trim(line);
      if (t.empty()) continue;
      if (t.front() == '[') {
        if (t.back() != ']') {
          throw ArgumentError(origin_ + ":" + std::to_string(lineno) + ": malformed section");
        }
        section = trim(std::string_view(t).substr(1, t.size() - 2));
        sections_[section];
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ArgumentError(origin_ + ":" + std::to_string(lineno) + ": expected key = value");
      }
      const std::string key = trim(std::string_view(t).substr(0, eq));
      const std::string value = trim(std::string_view(t).substr(eq + 1));
      if (key.empty()) {
        throw ArgumentError(origin_ + ":" + std::to_string(lineno) + ": empty key");
      }
      sections_[section][key] = value;
    }
  }

  bool has(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    return s != sections_.end() && s->second.count(key) > 0;
  }

  template <typename F>
  void fetch(const std::string& section, const std::string& key, F&& assign) {
    const auto s = sections_.find(section);
    if (s == sections_.end()) return;
    const auto it = s->second.find(key);
    if (it == s->second.end()) return;
    try {
      assign(it->second);
    } catch (const std::exception& e) {
      throw ArgumentError(origin_ + ": field '" + key + "' in [" + section + "]: " + e.what());
    }
    consumed_.insert(section + "/" + key);
  }

  void string(const std::string& sec, const std::string& key, std::string& out) {
    fetch(sec, key, [&](const std::string& v) { out = v; });
  }
  void u64(const std::string& sec, const std::string& key, std::uint64_t& out) {
    fetch(sec, key, [&](const std::string& v) { out = parse_u64(v); });
  }
  void size(const std::string& sec, const std::string& key, std::size_t& out) {
    fetch(sec, key, [&](const std::string& v) { out = static_cast<std::size_t>(parse_u64(v)); });
  }
  void integer(const std::string& sec, const std::string& key, int& out) {
    fetch(sec, key, [&](const std::string& v) { out = static_cast<int>(parse_u64(v)); });
  }
  void real(const std::string& sec, const std::string& key, double& out) {
    fetch(sec, key, [&](const std::string& v) { out = parse_double(v); });
  }
  void boolean(const std::string& sec, const std::string& key, bool& out) {
    fetch(sec, key, [&](const std::string& v) {
      if (v == "true" || v == "1") out = true;
      else if (v == "false" || v == "0") out = false;
      else throw ArgumentError("expected true|false");
    });
  }
  void size_list(const std::string& sec, const std::string& key, std::vector<std::size_t>& out) {
    fetch(sec, key, [&](const std::string& v) {
      out.clear();
      for (const auto& item : split_list(v)) out.push_back(parse_u64(item));
    });
  }
  void string_list(const std::string& sec, const std::string& key, std::vector<std::string>& out) {
    fetch(sec, key, [&](const std::string& v) { out = split_list(v); });
  }

  void check_consumed() const {
    for (const auto& [section, kv] : sections_) {
      for (const auto& [key, value] : kv) {
        if (consumed_.count(section + "/" + key) == 0) {
          throw ArgumentError(origin_ + ": unknown field '" + key + "' in [" + section + "]");
        }
      }
    }
  }

  static std::uint64_t parse_u64(const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) {
      throw ArgumentError("'" + v + "' is not a nonnegative integer");
    }
    return out;
  }
  static double parse_double(const std::string& v) {
    double out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) {
      throw ArgumentError("'" + v + "' is not a number");
    }
    return out;
  }
  static std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : v) {
      if (ch == ',') {
        out.push_back(trim(cur));
        cur.clear();
      } else {
        cur.push_back(ch);
      }
    }
    if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
    return out;
  }

 private:
  std::string origin_;
  std::map<std::string, std::map<std::string, std::string>> sections_;
  std::set<std::string> consumed_;
};

double sigma_preset(const std::string& name) {
  // per-model penalty values recorded as presets
  if (name == "resnet-101") return 5e-4;
  if (name == "vgg-16") return 5e-6;
  if (name == "resnet-152") return 5e-7;
  throw ArgumentError("sigma_preset: expected resnet-101|vgg-16|resnet-152, got '" + name + "'");
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
  KvConfig kv(text, origin);
  ExperimentConfig cfg;

  kv.string("experiment", "trainer", cfg.trainer);
  kv.integer("experiment", "workers", cfg.workers);
  kv.u64("experiment", "seed", cfg.seed);
  kv.string("experiment", "schedule", cfg.schedule);
  kv.string("experiment", "out", cfg.out_dir);

  auto& p = cfg.problem;
  kv.string("problem", "kind", p.kind);
  kv.size("problem", "n", p.n);
  kv.real("problem", "condition", p.condition);
  kv.u64("problem", "rotation_seed", p.rotation_seed);
  kv.string("problem", "spectrum", p.spectrum);
  kv.string("problem", "dataset", p.dataset);
  kv.string("problem", "csv_path", p.csv_path);
  kv.string("problem", "label_col", p.label_col);
  kv.string_list("problem", "feature_cols", p.feature_cols);
  kv.size("problem", "samples", p.samples);
  kv.u64("problem", "dataset_seed", p.dataset_seed);
  kv.size_list("problem", "layers", p.layers);
  kv.string("problem", "activation", p.activation);
  kv.string("problem", "loss", p.loss);

  auto& t = cfg.train;
  std::string base_kind;
  kv.string("optimizer", "base", base_kind);
  if (!base_kind.empty()) t.base.kind = parse_base_kind(base_kind);
  kv.real("optimizer", "lr", t.base.lr);
  kv.real("optimizer", "weight_decay", t.base.weight_decay);
  kv.real("optimizer", "beta1", t.base.beta1);
  kv.real("optimizer", "beta2", t.base.beta2);
  kv.real("optimizer", "eps", t.base.eps);
  kv.real("optimizer", "momentum", t.base.momentum);
  kv.size("optimizer", "k", t.k);
  kv.size("optimizer", "l", t.l);
  kv.real("optimizer", "alpha", t.alpha);
  kv.real("optimizer", "eigval_floor", t.eigval_floor);
  kv.size("optimizer", "refresh_interval", t.refresh_interval);
  kv.size("optimizer", "curvature_batch", t.curvature_batch);

  kv.size("training", "epochs", t.epochs);
  kv.size("training", "K", t.outer_rounds);
  kv.size("training", "P", t.inner_epochs);
  kv.real("training", "sigma", t.sigma);
  std::string preset;
  kv.string("training", "sigma_preset", preset);
  if (!preset.empty()) t.sigma = sigma_preset(preset);
  kv.size("training", "batch_size", t.batch_size);
  kv.real("training", "loss_target", cfg.loss_target);
  kv.boolean("training", "sigma_zero_reduction", t.sigma_zero_reduction);
  kv.boolean("training", "debug_hash_checks", t.debug_hash_checks);

  kv.boolean("lanczos", "reorth_safeguard", t.lanczos.reorth_safeguard);
  kv.real("lanczos", "safeguard_ratio", t.lanczos.safeguard_ratio);
  kv.real("lanczos", "breakdown_rtol", t.lanczos.breakdown_rtol);

  kv.real("model", "bandwidth_gbps", t.model_bandwidth_gbps);
  kv.real("model", "gflops", t.model_gflops);

  kv.check_consumed();

  if (cfg.workers < 1) throw ArgumentError(origin + ": field 'workers' must be >= 1");
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

// ---------------------------------------------------------------------------
// Problem construction
// ---------------------------------------------------------------------------

TrainerConfig build_trainer_config(const ExperimentConfig& cfg) {
  TrainerConfig t = cfg.train;
  t.kind = parse_trainer(cfg.trainer);
  t.seed = cfg.seed;
  return t;
}

Problem build_problem(const ExperimentConfig& cfg) {
  Problem problem;
  const auto& p = cfg.problem;
  if (p.kind == "quadratic") {
    Vector spectrum;
    if (!p.spectrum.empty()) {
      std::istringstream in(p.spectrum);
      std::string item;
      while (std::getline(in, item, ',')) spectrum.push_back(std::stod(item));
    } else {
      if (p.n < 2) throw ArgumentError("problem: quadratic needs n >= 2");
      const double half = 0.5 * std::log10(p.condition);
      spectrum.resize(p.n);
      for (std::size_t i = 0; i < p.n; ++i) {
        const double frac = static_cast<double>(i) / static_cast<double>(p.n - 1);
        spectrum[i] = std::pow(10.0, -half + 2.0 * half * frac);
      }
    }
    problem.oracle = std::make_shared<QuadraticOracle>(std::move(spectrum), p.rotation_seed);
    problem.dataset = Dataset::dummy(static_cast<std::size_t>(cfg.workers));
    problem.w0.resize(problem.oracle->dim());
    Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 99);
    rng.fill_normal(problem.w0);
  } else if (p.kind == "mlp") {
    if (!p.csv_path.empty()) {
      problem.dataset = load_csv_dataset(p.csv_path, p.feature_cols, p.label_col);
    } else {
      problem.dataset =
          generate_synthetic_dataset(parse_dataset_kind(p.dataset), p.samples, p.dataset_seed);
    }
    if (p.layers.size() < 3) throw ArgumentError("problem: layers needs >= 3 entries");
    if (p.layers.front() != problem.dataset.feature_dim()) {
      throw ArgumentError("problem: layers front != dataset feature_dim");
    }
    auto oracle = std::make_shared<MlpOracle>(p.layers, parse_activation(p.activation),
                                              parse_loss(p.loss));
    problem.w0 = oracle->init_params(cfg.seed);
    problem.oracle = std::move(oracle);
  } else {
    throw ArgumentError("problem: field 'kind' must be quadratic|mlp, got '" + p.kind + "'");
  }
  return problem;
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

RunPaths RunPaths::in_dir(const fs::path& dir) {
  return {dir / "metrics.csv", dir / "ledger.csv", dir / "memory.csv", dir / "summary.json"};
}

namespace {

std::string metric_cell(double x) { return std::isnan(x) ? std::string() : format_double(x); }

void write_metrics_csv(const fs::path& path, const std::string& trainer,
                       const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "trainer,outer_k,inner_l,epoch,train_loss,train_acc,residual_norm,wallclock_ms,"
         "ese_refresh_flag\n";
  for (const auto& r : rows) {
    out << trainer << ',';
    if (r.outer_k >= 0) out << r.outer_k;
    out << ',';
    if (r.inner_l >= 0) out << r.inner_l;
    out << ',' << r.epoch << ',' << format_double(r.train_loss) << ',' << metric_cell(r.train_acc)
        << ',' << metric_cell(r.residual_norm) << ',' << format_double(r.wallclock_ms) << ','
        << (r.ese_refresh ? 1 : 0) << '\n';
  }
}

void write_ledger_csv(const fs::path& path, const std::vector<CommLedger::Row>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "event_index,op,floats,rank,sent,received\n";
  for (const auto& r : rows) {
    out << r.event << ',' << r.op << ',' << r.floats << ',' << r.rank << ',' << r.sent << ','
        << r.received << '\n';
  }
}

void write_memory_csv(const fs::path& path, const std::vector<SlotMeter>& meters) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "rank,object,peak_slots\n";
  for (std::size_t r = 0; r < meters.size(); ++r) {
    for (const auto& [name, slots] : meters[r].peak) {
      out << r << ',' << name << ',' << slots << '\n';
    }
  }
}

}  // namespace

int run_experiment(const ExperimentConfig& cfg) {
  const TrainerConfig tcfg = build_trainer_config(cfg);
  const Problem problem = build_problem(cfg);
  const Schedule schedule = parse_schedule(cfg.schedule, cfg.seed);

  fs::create_directories(cfg.out_dir);
  const RunPaths paths = RunPaths::in_dir(cfg.out_dir);

  const std::size_t n = problem.oracle->dim();
  const std::size_t lanczos_m = tcfg.k + tcfg.l > 0 ? lanczos_budget(tcfg.k, tcfg.l, n) : 0;
  const std::size_t max_shard =
      Shard::for_rank(problem.dataset.size(), cfg.workers, 0).len();
  const std::size_t rounds_per_epoch = (max_shard + tcfg.batch_size - 1) / tcfg.batch_size;

  json summary;
  summary["trainer"] = cfg.trainer;
  summary["workers"] = cfg.workers;
  summary["seed"] = cfg.seed;
  summary["schedule"] = cfg.schedule;
  summary["problem_kind"] = cfg.problem.kind;
  summary["n"] = n;
  summary["samples"] = problem.dataset.size();
  summary["k"] = tcfg.k;
  summary["l"] = tcfg.l;
  summary["lanczos_m"] = lanczos_m;
  summary["rounds_per_epoch"] = rounds_per_epoch;
  summary["loss_target"] = cfg.loss_target;

  CommLedger ledger;
  TrainResult result;
  try {
    result = train(tcfg, problem, cfg.workers, schedule, &ledger);
  } catch (const TrainingDiverged& e) {
    summary["aborted"] = true;
    summary["abort_reason"] = e.what();
    std::ofstream out(paths.summary_json);
    out << summary.dump(2) << '\n';
    return 2;
  }

  write_metrics_csv(paths.metrics_csv, cfg.trainer, result.metrics);
  write_ledger_csv(paths.ledger_csv, ledger.rows());
  write_memory_csv(paths.memory_csv, result.memory);

  summary["aborted"] = false;
  summary["epochs_run"] = result.metrics.size();
  summary["ese_refreshes"] = result.ese_refreshes;
  summary["gs_flops"] = result.gs_flops;
  summary["safeguard_passes"] = result.safeguard_passes;
  summary["final_loss"] = result.final_loss();
  if (const auto acc = result.final_accuracy()) {
    summary["final_accuracy"] = *acc;
  } else {
    summary["final_accuracy"] = nullptr;
  }
  if (const auto e = result.epochs_to_loss(cfg.loss_target)) {
    summary["epochs_to_target"] = *e;
    summary["modeled_ms_at_target"] =
        result.metrics[*e - 1].wallclock_ms;
  } else {
    summary["epochs_to_target"] = nullptr;
    summary["modeled_ms_at_target"] = nullptr;
  }
  summary["modeled_total_ms"] =
      result.metrics.empty() ? 0.0 : result.metrics.back().wallclock_ms;
  // measured time; everything else in the artifacts is seed-deterministic
  summary["raw_wallclock_ms"] = result.raw_wallclock_ms;

  std::vector<std::int64_t> d_slots;
  for (const auto& meter : result.memory) d_slots.push_back(meter.get("D_shard"));
  summary["d_shard_slots_per_rank"] = d_slots;

  std::ofstream out(paths.summary_json);
  if (!out) throw IoError("cannot write '" + paths.summary_json.string() + "'");
  out << summary.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("report: cannot open '" + path.string() + "'");
  json j;
  in >> j;
  return j;
}

struct LedgerRowLite {
  std::int64_t event;
  std::string op;
  std::int64_t floats;
  int rank;
  std::int64_t sent;
  std::int64_t received;
};

std::vector<LedgerRowLite> load_ledger(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("report: cannot open '" + path.string() + "'");
  std::string line;
  std::getline(in, line);  // header
  std::vector<LedgerRowLite> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LedgerRowLite r;
    std::istringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    r.event = std::stoll(cell);
    std::getline(ss, r.op, ',');
    std::getline(ss, cell, ',');
    r.floats = std::stoll(cell);
    std::getline(ss, cell, ',');
    r.rank = std::stoi(cell);
    std::getline(ss, cell, ',');
    r.sent = std::stoll(cell);
    std::getline(ss, cell, ',');
    r.received = std::stoll(cell);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace

std::string memory_report(const std::vector<std::string>& run_dirs) {
  std::ostringstream out;
  out << "C  n      m   D_shard_slots  bound=ceil(n/C)*(m+1)  status\n";
  std::int64_t prev_slots = -1;
  bool all_ok = true;
  for (const auto& dir : run_dirs) {
    const auto paths = RunPaths::in_dir(dir);
    const json summary = load_json(paths.summary_json);
    const auto n = summary.at("n").get<std::size_t>();
    const auto m = summary.at("lanczos_m").get<std::size_t>();
    const auto workers = summary.at("workers").get<int>();
    const auto slots = summary.at("d_shard_slots_per_rank").get<std::vector<std::int64_t>>();
    const std::int64_t measured = slots.empty() ? 0 : *std::max_element(slots.begin(), slots.end());
    const auto bound = static_cast<std::int64_t>(
        ((n + static_cast<std::size_t>(workers) - 1) / static_cast<std::size_t>(workers)) *
        (m + 1));
    const bool ok = measured == bound && (prev_slots < 0 || measured <= prev_slots);
    all_ok = all_ok && ok;
    prev_slots = measured;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-2d %-6zu %-3zu %-14lld %-22lld %s\n", workers, n, m,
                  static_cast<long long>(measured), static_cast<long long>(bound),
                  ok ? "OK" : "MISMATCH");
    out << buf;
  }
  out << (all_ok ? "memory accounting: OK\n" : "memory accounting: MISMATCH\n");
  return out.str();
}

std::string comm_report(const std::string& run_dir) {
  const auto paths = RunPaths::in_dir(run_dir);
  const json summary = load_json(paths.summary_json);
  const auto rows = load_ledger(paths.ledger_csv);

  const auto refreshes = summary.at("ese_refreshes").get<std::int64_t>();
  const auto m = summary.at("lanczos_m").get<std::int64_t>();
  const auto n = summary.at("n").get<std::int64_t>();
  const auto kl = summary.at("k").get<std::int64_t>() + summary.at("l").get<std::int64_t>();
  const auto epochs = summary.at("epochs_run").get<std::int64_t>();
  const auto rounds = summary.at("rounds_per_epoch").get<std::int64_t>();
  const auto safeguards = summary.at("safeguard_passes").get<std::int64_t>();

  // count events (each event has one row per rank)
  std::map<std::string, std::int64_t> events;
  std::map<std::string, std::int64_t> event_floats;
  std::int64_t sent = 0;
  std::int64_t received = 0;
  std::int64_t last_event = -1;
  for (const auto& r : rows) {
    sent += r.sent;
    received += r.received;
    if (r.event != last_event) {
      last_event = r.event;
      events[r.op] += 1;
      event_floats[r.op] += r.floats;
    }
  }

  const std::int64_t expect_gather = refreshes * m;
  const std::int64_t expect_reduce_lanczos = 2 * refreshes * m + 2 * safeguards;
  const std::int64_t expect_reduce_grad = epochs * rounds;
  const std::int64_t expect_assembly = kl > 0 ? refreshes : 0;

  std::int64_t reduce_coeff = 0;
  std::int64_t reduce_beta = 0;
  std::int64_t reduce_grad = 0;
  last_event = -1;
  for (const auto& r : rows) {
    if (r.op != "all_reduce" || r.event == last_event) continue;
    last_event = r.event;
    if (r.floats == m + 1) reduce_coeff += 1;
    else if (r.floats == 1) reduce_beta += 1;
    else if (r.floats == n) reduce_grad += 1;
  }

  std::ostringstream out;
  out << "op             events  expected\n";
  auto line = [&](const char* name, std::int64_t got, std::int64_t want) {
    char buf[120];
    std::snprintf(buf, sizeof(buf), "%-14s %-7lld %-8lld %s\n", name,
                  static_cast<long long>(got), static_cast<long long>(want),
                  got == want ? "OK" : "MISMATCH");
    out << buf;
    return got == want;
  };
  bool ok = true;
  ok &= line("all_gather", events["all_gather"], expect_gather);
  ok &= line("reduce(m+1)", reduce_coeff, refreshes * m + safeguards);
  ok &= line("reduce(beta)", reduce_beta, refreshes * m + safeguards);
  ok &= line("reduce(grad)", reduce_grad, expect_reduce_grad);
  ok &= line("all_reduce", events["all_reduce"],
             expect_reduce_lanczos + expect_reduce_grad);
  ok &= line("vhat_assembly", events["vhat_assembly"], expect_assembly);

  out << "floats sent " << sent << ", received " << received
      << (sent == received ? " (conserved)\n" : " (NOT conserved)\n");
  ok = ok && sent == received;
  out << (ok ? "communication ledger: OK\n" : "communication ledger: MISMATCH\n");
  return out.str();
}

}  // namespace dho2
