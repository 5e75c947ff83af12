// Parallel-vs-serial comparison for the hot kernels and the worker backends.
// The OpenMP paths must be bitwise identical to the serial reference; this
// binary checks that while timing both.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "dho2/collectives.hpp"
#include "dho2/dist_lanczos.hpp"
#include "dho2/kernels.hpp"
#include "dho2/linalg.hpp"
#include "dho2/oracle.hpp"
#include "dho2/rng.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <typename F>
double timed(F&& fn, int reps) {
  const auto t0 = Clock::now();
  for (int r = 0; r < reps; ++r) fn();
  return ms_since(t0) / reps;
}

bool bitwise_equal(const dho2::Vector& a, const dho2::Vector& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
  }
  return true;
}

void bench_project_out() {
  const std::size_t n = 1u << 20;
  const std::size_t cols = 32;
  dho2::TallMatrix d(n, cols);
  dho2::Rng rng(11);
  rng.fill_normal(d.data());
  dho2::Vector h(n);
  rng.fill_normal(h);

  dho2::kernels::set_parallel(false);
  dho2::Vector serial;
  const double t_serial = timed([&] { serial = dho2::linalg::project_out(h, d, cols); }, 3);
  dho2::kernels::set_parallel(true);
  dho2::Vector parallel;
  const double t_parallel = timed([&] { parallel = dho2::linalg::project_out(h, d, cols); }, 3);

  std::printf("project_out  n=%zu cols=%zu   serial %8.2f ms   openmp %8.2f ms   x%.2f   %s\n", n,
              cols, t_serial, t_parallel, t_serial / t_parallel,
              bitwise_equal(serial, parallel) ? "bitwise-equal" : "MISMATCH");
}

void bench_mlp_grad() {
  const dho2::Dataset data =
      dho2::generate_synthetic_dataset(dho2::DatasetKind::TwoGaussians, 4096, 5);
  const dho2::MlpOracle mlp({2, 64, 64, 2}, dho2::Activation::Tanh,
                            dho2::LossKind::SoftmaxCrossEntropy);
  const dho2::Vector w = mlp.init_params(3);
  const dho2::Batch batch = data.full_batch();

  dho2::kernels::set_parallel(false);
  dho2::Vector serial;
  const double t_serial = timed([&] { serial = mlp.grad(w, batch); }, 3);
  dho2::kernels::set_parallel(true);
  dho2::Vector parallel;
  const double t_parallel = timed([&] { parallel = mlp.grad(w, batch); }, 3);

  std::printf("mlp_grad     batch=%zu dim=%zu  serial %8.2f ms   openmp %8.2f ms   x%.2f   %s\n",
              batch.size, mlp.dim(), t_serial, t_parallel, t_serial / t_parallel,
              bitwise_equal(serial, parallel) ? "bitwise-equal" : "MISMATCH");
}

void bench_backends() {
  // distributed Lanczos on a rotated quadratic under the threaded backend vs
  // the serialized reference scheduler
  const std::size_t n = 4096;
  dho2::Vector spectrum(n);
  for (std::size_t i = 0; i < n; ++i) spectrum[i] = 1.0 + static_cast<double>(i);
  const dho2::QuadraticOracle oracle(spectrum, 0);  // diagonal: hvp cost stays O(n)
  const dho2::HvpFn hvp = [&](const dho2::Vector& v) { return oracle.apply_h(v); };
  const int workers = 4;
  const std::size_t m = 32;

  auto run_once = [&](dho2::Schedule sched) {
    dho2::TridiagMatrix b;
    dho2::run_workers(workers, sched, nullptr, [&](dho2::Worker& w) {
      auto res = dho2::lanczos_distributed(w, m, hvp, n, 99);
      if (w.rank() == 0) b = res.tridiag;
    });
    return b;
  };

  dho2::TridiagMatrix concurrent_b;
  const double t_threads =
      timed([&] { concurrent_b = run_once(dho2::Schedule::concurrent()); }, 3);
  dho2::TridiagMatrix serial_b;
  const double t_serial =
      timed([&] { serial_b = run_once(dho2::Schedule::round_robin()); }, 3);

  std::printf("dist_lanczos n=%zu m=%zu C=%d  round_robin %8.2f ms   threads %8.2f ms   x%.2f   %s\n",
              n, m, workers, t_serial, t_threads, t_serial / t_threads,
              concurrent_b == serial_b ? "bitwise-equal" : "MISMATCH");
}

}  // namespace

int main() {
  std::printf("threads available: %d\n", dho2::kernels::max_threads());
  bench_project_out();
  bench_mlp_grad();
  bench_backends();
  return 0;
}
