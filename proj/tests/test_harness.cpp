#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dho2/harness.hpp"
#include "test_support.hpp"

using namespace dho2;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("harness");

namespace {

const char* kQuadraticConfig = R"(
# desk-scale quadratic experiment
[experiment]
trainer = dho2
workers = 2
seed = 11
schedule = round_robin

[problem]
kind = quadratic
n = 24
condition = 100
rotation_seed = 5

[optimizer]
base = adam
lr = 0.01
k = 4
l = 0
alpha = 1.0

[training]
K = 3
P = 2
sigma = 0.1
batch_size = 1
loss_target = 1e-6
)";

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fs::path fresh_dir(const char* name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("config parsing covers every section") {
  const ExperimentConfig cfg = parse_config_text(kQuadraticConfig, "test");
  CHECK(cfg.trainer == "dho2");
  CHECK(cfg.workers == 2);
  CHECK(cfg.seed == 11);
  CHECK(cfg.problem.kind == "quadratic");
  CHECK(cfg.problem.n == 24);
  CHECK(cfg.train.base.kind == BaseKind::Adam);
  CHECK(cfg.train.base.lr == doctest::Approx(0.01));
  CHECK(cfg.train.k == 4);
  CHECK(cfg.train.alpha == doctest::Approx(1.0));
  CHECK(cfg.train.outer_rounds == 3);
  CHECK(cfg.train.inner_epochs == 2);
  CHECK(cfg.train.sigma == doctest::Approx(0.1));
  CHECK(cfg.loss_target == doctest::Approx(1e-6));
}

TEST_CASE("unknown config fields are usage errors naming the field") {
  CHECK_THROWS_WITH_AS(parse_config_text("[training]\nnot_a_field = 3\n", "cfg"),
                       "cfg: unknown field 'not_a_field' in [training]", ArgumentError);
  CHECK_THROWS_AS(parse_config_text("[experiment]\nworkers = zero\n", "cfg"), ArgumentError);
  CHECK_THROWS_AS(parse_config_text("no equals sign here\n", "cfg"), ArgumentError);
}

TEST_CASE("sigma presets map to the recorded per-model values") {
  const auto cfg =
      parse_config_text("[training]\nsigma_preset = vgg-16\n", "cfg");
  CHECK(cfg.train.sigma == doctest::Approx(5e-6));
  CHECK_THROWS_AS(parse_config_text("[training]\nsigma_preset = alexnet\n", "cfg"),
                  ArgumentError);
}

TEST_CASE("problem building validates shapes") {
  ExperimentConfig cfg = parse_config_text(kQuadraticConfig, "test");
  cfg.problem.kind = "mlp";
  cfg.problem.layers = {3, 4, 2};  // dataset is 2-dimensional
  CHECK_THROWS_AS(build_problem(cfg), ArgumentError);
  cfg.problem.kind = "no-such";
  CHECK_THROWS_AS(build_problem(cfg), ArgumentError);
}

TEST_CASE("run_experiment writes deterministic artifacts") {
  ExperimentConfig cfg = parse_config_text(kQuadraticConfig, "test");
  const fs::path dir_a = fresh_dir("dho2_run_a");
  const fs::path dir_b = fresh_dir("dho2_run_b");

  cfg.out_dir = dir_a.string();
  REQUIRE(run_experiment(cfg) == 0);
  cfg.out_dir = dir_b.string();
  REQUIRE(run_experiment(cfg) == 0);

  const auto paths_a = RunPaths::in_dir(dir_a);
  const auto paths_b = RunPaths::in_dir(dir_b);
  for (const auto& p : {paths_a.metrics_csv, paths_a.ledger_csv, paths_a.memory_csv,
                        paths_a.summary_json}) {
    CHECK(fs::exists(p));
  }

  // byte-identical metrics and ledgers across reruns
  CHECK(read_file(paths_a.metrics_csv) == read_file(paths_b.metrics_csv));
  CHECK(read_file(paths_a.ledger_csv) == read_file(paths_b.ledger_csv));
  CHECK(read_file(paths_a.memory_csv) == read_file(paths_b.memory_csv));

  // metrics csv schema is the stable superset
  std::istringstream metrics(read_file(paths_a.metrics_csv));
  std::string header;
  std::getline(metrics, header);
  CHECK(header ==
        "trainer,outer_k,inner_l,epoch,train_loss,train_acc,residual_norm,wallclock_ms,"
        "ese_refresh_flag");

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("sgd runs log no lanczos collectives") {
  ExperimentConfig cfg = parse_config_text(kQuadraticConfig, "test");
  cfg.trainer = "sgd";
  const fs::path dir = fresh_dir("dho2_run_sgd");
  cfg.out_dir = dir.string();
  REQUIRE(run_experiment(cfg) == 0);

  const std::string ledger = read_file(RunPaths::in_dir(dir).ledger_csv);
  CHECK(ledger.find("all_gather") == std::string::npos);
  CHECK(ledger.find("vhat_assembly") == std::string::npos);
  CHECK(ledger.find("all_reduce") != std::string::npos);  // gradient sync remains

  const std::string report = comm_report(dir.string());
  CHECK(report.find("communication ledger: OK") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("memory accounting matches the sharding bound across worker counts") {
  // n = 1000, k = 5 -> m = 20, so slots are 21 per shard row
  std::vector<std::string> dirs;
  for (int c : {1, 2, 4}) {
    ExperimentConfig cfg;
    cfg.trainer = "dho2";
    cfg.workers = c;
    cfg.seed = 3;
    cfg.schedule = "round_robin";
    cfg.problem.kind = "quadratic";
    cfg.problem.n = 1000;
    cfg.problem.condition = 10;
    cfg.problem.rotation_seed = 0;  // diagonal keeps the hvp cheap
    cfg.train.k = 5;
    cfg.train.l = 0;
    cfg.train.outer_rounds = 1;
    cfg.train.inner_epochs = 1;
    cfg.train.sigma = 0.1;
    cfg.train.batch_size = 1;
    const fs::path dir = fresh_dir(("dho2_mem_" + std::to_string(c)).c_str());
    cfg.out_dir = dir.string();
    REQUIRE(run_experiment(cfg) == 0);
    dirs.push_back(dir.string());
  }

  const std::string report = memory_report(dirs);
  CHECK(report.find("memory accounting: OK") != std::string::npos);
  // C=1: 1000*21; C=2: 500*21; C=4: 250*21
  CHECK(report.find("21000") != std::string::npos);
  CHECK(report.find("10500") != std::string::npos);
  CHECK(report.find("5250") != std::string::npos);
  for (const auto& d : dirs) fs::remove_all(d);
}

TEST_CASE("comm_report verifies the per-refresh pattern") {
  ExperimentConfig cfg = parse_config_text(kQuadraticConfig, "test");
  const fs::path dir = fresh_dir("dho2_run_comm");
  cfg.out_dir = dir.string();
  REQUIRE(run_experiment(cfg) == 0);
  const std::string report = comm_report(dir.string());
  CHECK(report.find("communication ledger: OK") != std::string::npos);
  CHECK(report.find("(conserved)") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("aborted runs produce a diagnostic summary and nonzero status") {
  ExperimentConfig cfg = parse_config_text(kQuadraticConfig, "test");
  cfg.trainer = "sgd";
  cfg.train.base.kind = BaseKind::Sgd;
  cfg.train.base.lr = 1e8;
  cfg.train.epochs = 500;
  cfg.problem.condition = 1e4;
  const fs::path dir = fresh_dir("dho2_run_abort");
  cfg.out_dir = dir.string();
  CHECK(run_experiment(cfg) == 2);
  const std::string summary = read_file(RunPaths::in_dir(dir).summary_json);
  CHECK(summary.find("\"aborted\": true") != std::string::npos);
  CHECK(summary.find("non-finite loss") != std::string::npos);
  fs::remove_all(dir);
}

TEST_SUITE_END();
