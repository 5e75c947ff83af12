#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>

#include "dho2/lanczos.hpp"
#include "dho2/linalg.hpp"
#include "dho2/oracle.hpp"
#include "dho2/rng.hpp"

// Independent oracles for the test suites. Everything here is deliberately
// separate from the library's own numerical paths: compensated summation,
// Eigen's dense eigensolver, and finite differences.
namespace testsup {

inline double kahan_dot(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  double comp = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double term = a[i] * b[i] - comp;
    const double next = sum + term;
    comp = (next - sum) - term;
    sum = next;
  }
  return sum;
}

inline Eigen::MatrixXd to_eigen(const dho2::TallMatrix& m) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (std::size_t j = 0; j < m.cols(); ++j) {
    for (std::size_t i = 0; i < m.rows(); ++i) out(static_cast<long>(i), static_cast<long>(j)) = m(i, j);
  }
  return out;
}

inline Eigen::VectorXd to_eigen(const dho2::Vector& v) {
  Eigen::VectorXd out(static_cast<long>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<long>(i)) = v[i];
  return out;
}

inline Eigen::MatrixXd tridiag_dense(const dho2::TridiagMatrix& b, std::size_t dim) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<long>(dim), static_cast<long>(dim));
  for (std::size_t i = 0; i < dim; ++i) out(static_cast<long>(i), static_cast<long>(i)) = b.diag[i];
  for (std::size_t i = 0; i + 1 < dim; ++i) {
    out(static_cast<long>(i), static_cast<long>(i + 1)) = b.offdiag[i];
    out(static_cast<long>(i + 1), static_cast<long>(i)) = b.offdiag[i];
  }
  return out;
}

/// Materializes a matrix-free operator column by column.
inline Eigen::MatrixXd materialize(const dho2::HvpFn& hvp, std::size_t n) {
  Eigen::MatrixXd out(static_cast<long>(n), static_cast<long>(n));
  for (std::size_t j = 0; j < n; ++j) {
    dho2::Vector e(n, 0.0);
    e[j] = 1.0;
    const dho2::Vector col = hvp(e);
    for (std::size_t i = 0; i < n; ++i) out(static_cast<long>(i), static_cast<long>(j)) = col[i];
  }
  return out;
}

inline Eigen::MatrixXd random_symmetric(std::size_t n, std::uint64_t seed) {
  dho2::Rng rng(seed);
  Eigen::MatrixXd a(static_cast<long>(n), static_cast<long>(n));
  for (long i = 0; i < a.rows(); ++i) {
    for (long j = 0; j < a.cols(); ++j) a(i, j) = rng.normal();
  }
  return 0.5 * (a + a.transpose());
}

inline dho2::HvpFn matrix_hvp(Eigen::MatrixXd h) {
  return [h = std::move(h)](const dho2::Vector& v) {
    const Eigen::VectorXd x = to_eigen(v);
    const Eigen::VectorXd y = h * x;
    dho2::Vector out(v.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = y(static_cast<long>(i));
    return out;
  };
}

/// Dense eigensolver oracle (Eigen's tridiagonalization + QR-style iteration).
struct DenseEig {
  Eigen::VectorXd values;   // ascending
  Eigen::MatrixXd vectors;  // columns
};

inline DenseEig dense_eig(const Eigen::MatrixXd& h) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
  return {es.eigenvalues(), es.eigenvectors()};
}

// ---- finite differences -----------------------------------------------

inline dho2::Vector fd_gradient(const dho2::Oracle& oracle, const dho2::Vector& w,
                                const dho2::Batch& batch, double eps) {
  dho2::Vector g(w.size());
  dho2::Vector wp = w;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double orig = wp[i];
    wp[i] = orig + eps;
    const double f_plus = oracle.value(wp, batch);
    wp[i] = orig - eps;
    const double f_minus = oracle.value(wp, batch);
    wp[i] = orig;
    g[i] = (f_plus - f_minus) / (2.0 * eps);
  }
  return g;
}

inline dho2::Vector fd_hvp(const dho2::Oracle& oracle, const dho2::Vector& w,
                           const dho2::Vector& v, const dho2::Batch& batch, double eps) {
  dho2::Vector wp = w;
  dho2::Vector wm = w;
  for (std::size_t i = 0; i < w.size(); ++i) {
    wp[i] += eps * v[i];
    wm[i] -= eps * v[i];
  }
  const dho2::Vector gp = oracle.grad(wp, batch);
  const dho2::Vector gm = oracle.grad(wm, batch);
  dho2::Vector out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = (gp[i] - gm[i]) / (2.0 * eps);
  return out;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

inline dho2::Vector random_vector(std::size_t n, std::uint64_t seed) {
  dho2::Vector v(n);
  dho2::Rng rng(seed);
  rng.fill_normal(v);
  return v;
}

/// Random orthonormal columns (for project_out tests).
inline dho2::TallMatrix random_orthonormal(std::size_t rows, std::size_t cols,
                                           std::uint64_t seed) {
  dho2::TallMatrix m(rows, cols);
  dho2::Rng rng(seed);
  rng.fill_normal(m.data());
  for (std::size_t j = 0; j < cols; ++j) {
    auto col = m.col(j);
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t i = 0; i < j; ++i) {
        const double c = dho2::linalg::dot(m.col(i), col);
        dho2::linalg::axpy(-c, m.col(i), col);
      }
    }
    dho2::linalg::scale(col, 1.0 / dho2::linalg::norm2(col));
  }
  return m;
}

}  // namespace testsup
