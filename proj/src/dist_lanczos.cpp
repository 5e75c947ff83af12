#include "dho2/dist_lanczos.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "dho2/kernels.hpp"

namespace dho2 {

std::uint64_t bits_hash(std::span<const double> v) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double x : v) {
    h ^= std::bit_cast<std::uint64_t>(x);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t tridiag_hash(const TridiagMatrix& b, std::size_t upto) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](double x) {
    h ^= std::bit_cast<std::uint64_t>(x);
    h *= 0x100000001b3ULL;
  };
  for (std::size_t i = 0; i < upto && i < b.diag.size(); ++i) mix(b.diag[i]);
  for (std::size_t i = 0; i < upto && i < b.offdiag.size(); ++i) mix(b.offdiag[i]);
  return h;
}

ShardedLanczosResult lanczos_distributed(Worker& worker, std::size_t m, const HvpFn& hvp,
                                         std::size_t n, std::uint64_t seed,
                                         const DistLanczosOptions& opts) {
  if (m < 1 || m > n) throw ArgumentError("lanczos_distributed: need 1 <= m <= n");

  ShardedLanczosResult res;
  res.shard = Shard::for_rank(n, worker.size(), worker.rank());
  const std::size_t rows = res.shard.len();
  res.basis_shard = TallMatrix(rows, m + 1);
  res.tridiag = TridiagMatrix(m + 1);
  res.memory.record("D_shard", static_cast<std::int64_t>(rows * (m + 1)));
  res.memory.record("B", static_cast<std::int64_t>((m + 1) + m));

  // v1 is replicated via the shared seed; every rank keeps its slice. A
  // mismatched seed would silently blend slices of different vectors (the
  // gathered state stays consistent), so the check must hash v1 itself.
  {
    const Vector v1 = seeded_unit_gaussian(n, seed);
    if (opts.hash_checks && !worker.all_equal(bits_hash(v1))) {
      throw DivergenceError("lanczos_distributed: seed mismatch across ranks");
    }
    res.basis_shard.set_col(0, std::span<const double>(v1).subspan(res.shard.begin, rows));
  }

  Vector h_shard(rows);
  res.memory.record("h_shard", static_cast<std::int64_t>(rows));

  auto project_shard = [&](std::size_t active) {
    // coefficient vector is full length m+1 (unfilled columns contribute
    // zeros), so the reduce payload matches the stated per-iteration count
    Vector partial(m + 1, 0.0);
    kernels::parallel_for(active, [&](std::size_t j) {
      partial[j] = linalg::dot(res.basis_shard.col(j), h_shard);
    });
    const Vector coeffs = worker.all_reduce_sum(partial);
    Vector next(rows);
    kernels::parallel_for(rows, [&](std::size_t r) {
      double acc = h_shard[r];
      for (std::size_t j = 0; j < active; ++j) acc -= res.basis_shard(r, j) * coeffs[j];
      next[r] = acc;
    });
    h_shard = std::move(next);
    res.gs_flops += static_cast<std::int64_t>(4 * active * rows + rows);
  };

  for (std::size_t i = 0; i < m; ++i) {
    const Vector v = worker.all_gather(res.basis_shard.col_vector(i), res.shard);
    res.memory.record("v_full", static_cast<std::int64_t>(n));
    Vector h = hvp(v);
    if (h.size() != n) throw DimensionError("lanczos_distributed: hvp returned wrong length");
    if (!linalg::all_finite(h)) {
      throw NumericError("lanczos_distributed: hvp returned non-finite values");
    }
    res.memory.record("h_full", static_cast<std::int64_t>(n));

    res.tridiag.diag[i] = linalg::dot(h, v);
    const double pre_norm = linalg::norm2(h);
    std::copy_n(h.begin() + static_cast<std::ptrdiff_t>(res.shard.begin), rows, h_shard.begin());

    project_shard(i + 1);
    double beta = std::sqrt(worker.all_reduce_sum(linalg::dot(h_shard, h_shard)));
    if (opts.lanczos.reorth_safeguard && beta > opts.lanczos.breakdown_rtol * pre_norm &&
        beta < opts.lanczos.safeguard_ratio * pre_norm) {
      project_shard(i + 1);
      beta = std::sqrt(worker.all_reduce_sum(linalg::dot(h_shard, h_shard)));
      ++res.safeguard_passes;
    }

    if (beta <= opts.lanczos.breakdown_rtol * pre_norm) {
      res.iterations = i + 1;
      res.breakdown = true;
      res.basis_shard = res.basis_shard.left_cols(i + 1);
      res.tridiag = res.tridiag.leading_block(i + 1);
      if (opts.hash_checks && !worker.all_equal(tridiag_hash(res.tridiag, i + 1))) {
        throw DivergenceError("lanczos_distributed: B diverged across ranks");
      }
      return res;
    }

    res.tridiag.offdiag[i] = beta;
    for (std::size_t r = 0; r < rows; ++r) res.basis_shard(r, i + 1) = h_shard[r] / beta;

    if (opts.hash_checks && !worker.all_equal(tridiag_hash(res.tridiag, i + 1))) {
      throw DivergenceError("lanczos_distributed: B diverged across ranks (seed mismatch?)");
    }
  }
  res.iterations = m;
  return res;
}

EseResult extract_ese_distributed(Worker& worker, const ShardedLanczosResult& state, std::size_t k,
                                  std::size_t l, SlotMeter* memory, bool hash_check) {
  const std::size_t m_eff = state.iterations;
  const std::size_t n = state.shard.total;
  EseResult out;
  out.k = k;
  out.l = l;
  if (k + l == 0) {
    out.eigvecs = TallMatrix(n, 0);
    return out;
  }
  if (m_eff < 1) throw ArgumentError("extract_ese_distributed: empty Lanczos state");
  if (k + l > m_eff) throw ArgumentError("extract_ese_distributed: k+l exceeds the filled block");
  if (hash_check && !worker.all_equal(tridiag_hash(state.tridiag, m_eff))) {
    throw DivergenceError("extract_ese_distributed: B differs across ranks");
  }

  // replicated eigenproblem, sharded basis transform
  const auto eig = linalg::tridiag_eig(state.tridiag.leading_block(m_eff));
  const auto idx = select_extreme_indices(m_eff, k, l);
  out.eigvals.resize(idx.size());
  TallMatrix u_sel(m_eff, idx.size());
  for (std::size_t c = 0; c < idx.size(); ++c) {
    out.eigvals[c] = eig.values[idx[c]];
    u_sel.set_col(c, eig.vectors.col(idx[c]));
  }

  const TallMatrix partial = linalg::matmul(state.basis_shard.left_cols(m_eff), u_sel);
  if (memory != nullptr) {
    memory->record("vhat_partial", static_cast<std::int64_t>(partial.rows() * partial.cols()));
  }
  out.eigvecs = worker.gather_rows(partial, state.shard);
  if (memory != nullptr) {
    memory->record("vhat", static_cast<std::int64_t>(out.eigvecs.rows() * out.eigvecs.cols()));
  }
  sign_normalize_columns(out.eigvecs);
  return out;
}

}  // namespace dho2
