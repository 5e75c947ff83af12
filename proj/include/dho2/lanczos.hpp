#pragma once

#include <cstdint>
#include <functional>

#include "dho2/linalg.hpp"

namespace dho2 {

/// Matrix-free symmetric operator v -> H v.
using HvpFn = std::function<Vector(const Vector&)>;

/// Iteration budget m = min(n, max(4(k+l), ceil(2 ln n))). The clamp to n
/// keeps tiny test problems legal; a Krylov space cannot exceed R^n.
std::size_t lanczos_budget(std::size_t k, std::size_t l, std::size_t n);

struct LanczosOptions {
  /// Extra Gram-Schmidt pass when the projection cancelled almost all of h
  /// (beta < safeguard_ratio * ||hvp(v)||). Disable for strict single-pass
  /// behaviour.
  bool reorth_safeguard = true;
  double safeguard_ratio = 1e-6;
  /// Stop and truncate when beta <= breakdown_rtol * ||hvp(v)||: the Krylov
  /// space is exhausted and the filled block is already exact.
  double breakdown_rtol = 1e-10;
};

struct LanczosResult {
  TallMatrix basis;       // D: n x (iterations+1); n x iterations after breakdown
  TridiagMatrix tridiag;  // B, same dimension as basis columns
  std::size_t iterations = 0;  // filled diagonal entries of B
  bool breakdown = false;
  std::int64_t gs_flops = 0;
  std::size_t safeguard_passes = 0;
};

/// Single-device Lanczos with full reorthogonalization. v1 is the seeded
/// standard Gaussian normalized to unit length; B[i][i] = v_i . hvp(v_i) and
/// the sub/super-diagonal holds the post-orthogonalization norms.
LanczosResult lanczos_single(std::size_t m, const HvpFn& hvp, std::size_t n, std::uint64_t seed,
                             const LanczosOptions& opts = {});

/// Extreme-spectrum estimate: the k largest (descending) followed by the l
/// smallest (ascending) Ritz values, with the matching Ritz vectors.
struct EseResult {
  Vector eigvals;      // length k+l
  TallMatrix eigvecs;  // n x (k+l), orthonormal columns, fixed sign convention
  std::size_t k = 0;
  std::size_t l = 0;

  std::size_t count() const noexcept { return eigvals.size(); }
};

EseResult extract_ese(const TallMatrix& basis, const TridiagMatrix& tridiag, std::size_t m_eff,
                      std::size_t k, std::size_t l);
EseResult extract_ese(const LanczosResult& result, std::size_t k, std::size_t l);

// shared with the distributed implementation
Vector seeded_unit_gaussian(std::size_t n, std::uint64_t seed);
void sign_normalize_columns(TallMatrix& m);
std::vector<std::size_t> select_extreme_indices(std::size_t count, std::size_t k, std::size_t l);

}  // namespace dho2
