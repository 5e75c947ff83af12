#pragma once

#include <cstddef>
#include <cstdint>

#ifdef DHO2_HAVE_OPENMP
#include <omp.h>
#endif

namespace dho2::kernels {

// Runtime switch between the OpenMP path and the serial reference path.
// Both paths are bitwise identical by construction: every output element is
// accumulated by exactly one thread in a fixed order, and reductions are
// combined over fixed-size chunks whose boundaries do not depend on the
// thread count.
bool parallel_enabled() noexcept;
void set_parallel(bool enabled) noexcept;
int max_threads() noexcept;

// Fixed chunk length for batched accumulations (samples per work unit).
inline constexpr std::size_t kBatchChunk = 16;

// Loop bodies must be independent across indices.
template <typename F>
inline void parallel_for(std::size_t n, F&& body) {
#ifdef DHO2_HAVE_OPENMP
  if (parallel_enabled() && n > 1) {
    const auto sn = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < sn; ++i) {
      body(static_cast<std::size_t>(i));
    }
    return;
  }
#endif
  for (std::size_t i = 0; i < n; ++i) {
    body(i);
  }
}

inline std::size_t chunk_count(std::size_t n, std::size_t chunk) noexcept {
  return n == 0 ? 0 : (n - 1) / chunk + 1;
}

}  // namespace dho2::kernels
