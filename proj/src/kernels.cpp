#include "dho2/kernels.hpp"

#include <atomic>

namespace dho2::kernels {

namespace {
std::atomic<bool> g_parallel{true};
}

bool parallel_enabled() noexcept { return g_parallel.load(std::memory_order_relaxed); }

void set_parallel(bool enabled) noexcept { g_parallel.store(enabled, std::memory_order_relaxed); }

int max_threads() noexcept {
#ifdef DHO2_HAVE_OPENMP
  return parallel_enabled() ? omp_get_max_threads() : 1;
#else
  return 1;
#endif
}

}  // namespace dho2::kernels
