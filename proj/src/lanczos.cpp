#include "dho2/lanczos.hpp"

#include <algorithm>
#include <cmath>

#include "dho2/rng.hpp"

namespace dho2 {

std::size_t lanczos_budget(std::size_t k, std::size_t l, std::size_t n) {
  if (n < 1) throw ArgumentError("lanczos_budget: n must be >= 1");
  if (k + l < 1) throw ArgumentError("lanczos_budget: k+l must be >= 1");
  if (k + l > n) throw ArgumentError("lanczos_budget: k+l exceeds the dimension");
  const auto log_term = static_cast<std::size_t>(std::ceil(2.0 * std::log(static_cast<double>(n))));
  return std::min(n, std::max(4 * (k + l), log_term));
}

Vector seeded_unit_gaussian(std::size_t n, std::uint64_t seed) {
  Vector v(n);
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + 0x1234567ULL);
  rng.fill_normal(v);
  const double nrm = linalg::norm2(v);
  if (nrm == 0.0) throw NumericError("seeded_unit_gaussian: zero draw");
  linalg::scale(v, 1.0 / nrm);
  return v;
}

LanczosResult lanczos_single(std::size_t m, const HvpFn& hvp, std::size_t n, std::uint64_t seed,
                             const LanczosOptions& opts) {
  if (m < 1 || m > n) throw ArgumentError("lanczos_single: need 1 <= m <= n");

  LanczosResult res;
  res.basis = TallMatrix(n, m + 1);
  res.tridiag = TridiagMatrix(m + 1);
  res.basis.set_col(0, seeded_unit_gaussian(n, seed));

  for (std::size_t i = 0; i < m; ++i) {
    const Vector v = res.basis.col_vector(i);
    Vector h = hvp(v);
    if (h.size() != n) throw DimensionError("lanczos_single: hvp returned wrong length");
    if (!linalg::all_finite(h)) throw NumericError("lanczos_single: hvp returned non-finite values");

    res.tridiag.diag[i] = linalg::dot(h, v);
    const double pre_norm = linalg::norm2(h);

    h = linalg::project_out(h, res.basis, i + 1, &res.gs_flops);
    double beta = linalg::norm2(h);
    if (opts.reorth_safeguard && beta > opts.breakdown_rtol * pre_norm &&
        beta < opts.safeguard_ratio * pre_norm) {
      h = linalg::project_out(h, res.basis, i + 1, &res.gs_flops);
      beta = linalg::norm2(h);
      ++res.safeguard_passes;
    }

    if (beta <= opts.breakdown_rtol * pre_norm) {
      // invariant subspace found: truncate to the filled block
      res.iterations = i + 1;
      res.breakdown = true;
      res.basis = res.basis.left_cols(i + 1);
      res.tridiag = res.tridiag.leading_block(i + 1);
      return res;
    }

    res.tridiag.offdiag[i] = beta;
    for (double& x : h) x /= beta;
    res.basis.set_col(i + 1, h);
  }
  res.iterations = m;
  return res;
}

std::vector<std::size_t> select_extreme_indices(std::size_t count, std::size_t k, std::size_t l) {
  // indices into an ascending spectrum: k largest descending, l smallest
  // ascending
  std::vector<std::size_t> idx;
  idx.reserve(k + l);
  for (std::size_t j = 0; j < k; ++j) idx.push_back(count - 1 - j);
  for (std::size_t j = 0; j < l; ++j) idx.push_back(j);
  return idx;
}

void sign_normalize_columns(TallMatrix& m) {
  // The entry of largest magnitude (lowest index on ties) is made positive.
  // Anchoring on the dominant entry keeps the convention stable under the
  // 1e-10 perturbations the cross-worker-count comparisons allow.
  for (std::size_t j = 0; j < m.cols(); ++j) {
    auto col = m.col(j);
    std::size_t best = 0;
    for (std::size_t i = 1; i < col.size(); ++i) {
      if (std::abs(col[i]) > std::abs(col[best])) best = i;
    }
    if (col[best] < 0.0) linalg::scale(col, -1.0);
  }
}

EseResult extract_ese(const TallMatrix& basis, const TridiagMatrix& tridiag, std::size_t m_eff,
                      std::size_t k, std::size_t l) {
  if (m_eff < 1 || m_eff > tridiag.dim()) throw ArgumentError("extract_ese: bad m_eff");
  EseResult out;
  out.k = k;
  out.l = l;
  if (k + l == 0) {
    out.eigvecs = TallMatrix(basis.rows(), 0);
    return out;
  }
  if (k + l > m_eff) throw ArgumentError("extract_ese: k+l exceeds the filled block");

  const auto eig = linalg::tridiag_eig(tridiag.leading_block(m_eff));
  const auto idx = select_extreme_indices(m_eff, k, l);

  out.eigvals.resize(idx.size());
  TallMatrix u_sel(m_eff, idx.size());
  for (std::size_t c = 0; c < idx.size(); ++c) {
    out.eigvals[c] = eig.values[idx[c]];
    u_sel.set_col(c, eig.vectors.col(idx[c]));
  }
  out.eigvecs = linalg::matmul(basis.left_cols(m_eff), u_sel);
  sign_normalize_columns(out.eigvecs);
  return out;
}

EseResult extract_ese(const LanczosResult& result, std::size_t k, std::size_t l) {
  return extract_ese(result.basis, result.tridiag, result.iterations, k, l);
}

}  // namespace dho2
