#include "dho2/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dho2/kernels.hpp"

namespace dho2 {

TallMatrix TallMatrix::left_cols(std::size_t k) const {
  TallMatrix out(rows_, k);
  std::copy_n(data_.begin(), rows_ * k, out.data().begin());
  return out;
}

TridiagMatrix TridiagMatrix::leading_block(std::size_t k) const {
  TridiagMatrix out(k);
  std::copy_n(diag.begin(), k, out.diag.begin());
  if (k > 1) std::copy_n(offdiag.begin(), k - 1, out.offdiag.begin());
  return out;
}

namespace linalg {

bool all_finite(std::span<const double> v) noexcept {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double norm_inf(std::span<const double> v) noexcept {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw DimensionError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void scale(std::span<double> v, double alpha) noexcept {
  for (double& x : v) x *= alpha;
}

Vector add(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("add: length mismatch");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Vector sub(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("sub: length mismatch");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

Vector scaled(std::span<const double> v, double alpha) {
  Vector out(v.begin(), v.end());
  scale(out, alpha);
  return out;
}

Vector matvec_transpose(const TallMatrix& m, std::span<const double> x, std::size_t active_cols) {
  if (x.size() != m.rows()) throw DimensionError("matvec_transpose: length mismatch");
  if (active_cols > m.cols()) throw DimensionError("matvec_transpose: active_cols out of range");
  Vector out(m.cols(), 0.0);
  kernels::parallel_for(active_cols, [&](std::size_t j) { out[j] = dot(m.col(j), x); });
  return out;
}

Vector matvec_transpose(const TallMatrix& m, std::span<const double> x) {
  return matvec_transpose(m, x, m.cols());
}

Vector matvec(const TallMatrix& m, std::span<const double> c, std::size_t active_cols) {
  if (c.size() < active_cols) throw DimensionError("matvec: coefficient vector too short");
  if (active_cols > m.cols()) throw DimensionError("matvec: active_cols out of range");
  Vector out(m.rows(), 0.0);
  kernels::parallel_for(m.rows(), [&](std::size_t i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < active_cols; ++j) acc += m(i, j) * c[j];
    out[i] = acc;
  });
  return out;
}

Vector matvec(const TallMatrix& m, std::span<const double> c) { return matvec(m, c, m.cols()); }

TallMatrix matmul(const TallMatrix& a, const TallMatrix& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimension mismatch");
  TallMatrix out(a.rows(), b.cols());
  kernels::parallel_for(b.cols(), [&](std::size_t j) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double bkj = b(k, j);
      if (bkj == 0.0) continue;
      for (std::size_t i = 0; i < a.rows(); ++i) out(i, j) += a(i, k) * bkj;
    }
  });
  return out;
}

Vector project_out(std::span<const double> h, const TallMatrix& d, std::size_t active_cols,
                   std::int64_t* flops) {
  if (h.size() != d.rows()) throw DimensionError("project_out: row mismatch");
  if (active_cols > d.cols()) throw DimensionError("project_out: active_cols out of range");
  const std::size_t n = h.size();
  Vector coeffs(active_cols, 0.0);
  kernels::parallel_for(active_cols, [&](std::size_t j) { coeffs[j] = dot(d.col(j), h); });
  Vector out(n);
  kernels::parallel_for(n, [&](std::size_t i) {
    double acc = h[i];
    for (std::size_t j = 0; j < active_cols; ++j) acc -= d(i, j) * coeffs[j];
    out[i] = acc;
  });
  if (flops != nullptr) {
    *flops += static_cast<std::int64_t>(4 * active_cols * n + n);
  }
  return out;
}

namespace {

// Implicit-shift QL sweep on (d, e) with rotations accumulated into z.
// Classic EISPACK tql2 structure.
void ql_implicit(Vector& d, Vector& e, TallMatrix& z) {
  const std::size_t n = d.size();
  if (n <= 1) return;
  constexpr double eps = std::numeric_limits<double>::epsilon();
  e.push_back(0.0);  // scratch slot so e[m] is addressable at m = n-1

  for (std::size_t l = 0; l < n; ++l) {
    int iter = 0;
    std::size_t m;
    do {
      for (m = l; m + 1 < n; ++m) {
        const double dd = std::abs(d[m]) + std::abs(d[m + 1]);
        if (std::abs(e[m]) <= eps * dd) break;
      }
      if (m != l) {
        if (iter++ == 60) throw NumericError("tridiag_eig: QL iteration did not converge");
        double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
        double r = std::hypot(g, 1.0);
        g = d[m] - d[l] + e[l] / (g + std::copysign(r, g));
        double s = 1.0;
        double c = 1.0;
        double p = 0.0;
        bool underflow = false;
        for (std::size_t ii = m; ii-- > l;) {
          double f = s * e[ii];
          const double b = c * e[ii];
          r = std::hypot(f, g);
          e[ii + 1] = r;
          if (r == 0.0) {
            d[ii + 1] -= p;
            e[m] = 0.0;
            underflow = true;
            break;
          }
          s = f / r;
          c = g / r;
          g = d[ii + 1] - p;
          r = (d[ii] - g) * s + 2.0 * c * b;
          p = s * r;
          d[ii + 1] = g + p;
          g = c * r - b;
          for (std::size_t k = 0; k < n; ++k) {
            f = z(k, ii + 1);
            z(k, ii + 1) = s * z(k, ii) + c * f;
            z(k, ii) = c * z(k, ii) - s * f;
          }
        }
        if (underflow) continue;
        d[l] -= p;
        e[l] = g;
        e[m] = 0.0;
      }
    } while (m != l);
  }
  e.pop_back();
}

}  // namespace

TridiagEig tridiag_eig(const TridiagMatrix& b) {
  if (b.dim() == 0) throw ArgumentError("tridiag_eig: empty matrix");
  if (!all_finite(b.diag) || !all_finite(b.offdiag)) {
    throw NumericError("tridiag_eig: non-finite entries");
  }
  const std::size_t n = b.dim();
  Vector d = b.diag;
  Vector e = b.offdiag;
  TallMatrix z(n, n);
  for (std::size_t i = 0; i < n; ++i) z(i, i) = 1.0;

  ql_implicit(d, e, z);

  // ascending eigenvalues with matching column order
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t c) { return d[a] < d[c]; });

  TridiagEig out;
  out.values.resize(n);
  out.vectors = TallMatrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = d[order[j]];
    out.vectors.set_col(j, z.col(order[j]));
  }
  return out;
}

}  // namespace linalg
}  // namespace dho2
