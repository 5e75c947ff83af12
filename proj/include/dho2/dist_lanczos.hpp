#pragma once

#include "dho2/accounting.hpp"
#include "dho2/collectives.hpp"
#include "dho2/lanczos.hpp"

namespace dho2 {

struct DistLanczosOptions {
  LanczosOptions lanczos;
  /// Cross-rank hash of B after every iteration; catches mismatched seeds or
  /// diverged replicas at the cost of one extra (ledger-visible) collective
  /// per iteration.
  bool hash_checks = false;
};

struct ShardedLanczosResult {
  TallMatrix basis_shard;  // D[s_c:e_c, :]
  TridiagMatrix tridiag;   // B, bitwise identical on every rank
  Shard shard;
  std::size_t iterations = 0;
  bool breakdown = false;
  std::int64_t gs_flops = 0;
  std::size_t safeguard_passes = 0;
  SlotMeter memory;
};

/// Sharded Lanczos over the collectives layer. Per iteration: one all_gather
/// of the current basis column (n floats), one all_reduce of the projection
/// coefficients (m+1 floats), one all_reduce of the squared residual norm
/// (1 float). Every rank evaluates the full hvp; only the basis is sharded.
ShardedLanczosResult lanczos_distributed(Worker& worker, std::size_t m, const HvpFn& hvp,
                                         std::size_t n, std::uint64_t seed,
                                         const DistLanczosOptions& opts = {});

/// Distributed ESE extraction: every rank eigendecomposes the replicated B,
/// forms its row block of V_hat = D U, and the blocks are assembled so every
/// rank ends with the full n x (k+l) matrix.
EseResult extract_ese_distributed(Worker& worker, const ShardedLanczosResult& state, std::size_t k,
                                  std::size_t l, SlotMeter* memory = nullptr,
                                  bool hash_check = false);

std::uint64_t tridiag_hash(const TridiagMatrix& b, std::size_t upto);
std::uint64_t bits_hash(std::span<const double> v);

}  // namespace dho2
