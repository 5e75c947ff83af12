#include <doctest.h>

#include <cstring>

#include "dho2/kernels.hpp"
#include "dho2/linalg.hpp"
#include "test_support.hpp"

using namespace dho2;

TEST_SUITE_BEGIN("linalg");

TEST_CASE("dot basics") {
  CHECK(linalg::dot(Vector{1, 2}, Vector{3, 4}) == 11.0);
  const Vector v = testsup::random_vector(9, 4);
  CHECK(linalg::dot(v, Vector(9, 0.0)) == 0.0);
  CHECK_THROWS_AS(linalg::dot(Vector{1, 2}, Vector{1}), DimensionError);
}

TEST_CASE("dot matches compensated summation") {
  const Vector a = testsup::random_vector(64, 10);
  const Vector b = testsup::random_vector(64, 11);
  const double got = linalg::dot(a, b);
  const double want = testsup::kahan_dot(a, b);
  CHECK(std::abs(got - want) <= 1e-12 * std::abs(want));
}

TEST_CASE("dot is bitwise deterministic") {
  const Vector a = testsup::random_vector(257, 20);
  const Vector b = testsup::random_vector(257, 21);
  const double first = linalg::dot(a, b);
  for (int rep = 0; rep < 8; ++rep) {
    const double again = linalg::dot(a, b);
    CHECK(std::memcmp(&first, &again, sizeof(double)) == 0);
  }
}

TEST_CASE("tridiag_eig analytic 2x2") {
  TridiagMatrix b(2);
  b.diag = {2, 2};
  b.offdiag = {1};
  const auto eig = linalg::tridiag_eig(b);
  CHECK(eig.values[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(eig.values[1] == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("tridiag_eig identity") {
  TridiagMatrix b(5);
  std::fill(b.diag.begin(), b.diag.end(), 1.0);
  const auto eig = linalg::tridiag_eig(b);
  for (std::size_t j = 0; j < 5; ++j) {
    CHECK(eig.values[j] == doctest::Approx(1.0).epsilon(1e-14));
    Vector r(5, 0.0);
    for (std::size_t i = 0; i < 5; ++i) {
      r[i] = 1.0 * eig.vectors(i, j) - eig.values[j] * eig.vectors(i, j);
    }
    CHECK(linalg::norm2(r) <= 1e-8);
  }
}

TEST_CASE("tridiag_eig matches dense eigensolver oracle") {
  TridiagMatrix b(12);
  Rng rng(33);
  for (auto& d : b.diag) d = rng.normal();
  for (auto& e : b.offdiag) e = rng.normal();

  const auto eig = linalg::tridiag_eig(b);
  const auto oracle = testsup::dense_eig(testsup::tridiag_dense(b, 12));
  for (std::size_t j = 0; j < 12; ++j) {
    CHECK(std::abs(eig.values[j] - oracle.values(static_cast<long>(j))) <= 1e-9);
  }

  const Eigen::MatrixXd dense = testsup::tridiag_dense(b, 12);
  const Eigen::MatrixXd u = testsup::to_eigen(eig.vectors);
  for (long j = 0; j < 12; ++j) {
    const double res =
        (dense * u.col(j) - eig.values[static_cast<std::size_t>(j)] * u.col(j)).norm();
    CHECK(res <= 1e-8 * std::max(1.0, std::abs(eig.values[static_cast<std::size_t>(j)])));
  }
}

TEST_CASE("tridiag_eig reconstruction and orthonormality") {
  TridiagMatrix b(9);
  Rng rng(77);
  for (auto& d : b.diag) d = 2.0 * rng.normal();
  for (auto& e : b.offdiag) e = rng.normal();
  const auto eig = linalg::tridiag_eig(b);

  const Eigen::MatrixXd u = testsup::to_eigen(eig.vectors);
  const Eigen::MatrixXd recon = u * testsup::to_eigen(eig.values).asDiagonal() * u.transpose();
  CHECK((recon - testsup::tridiag_dense(b, 9)).norm() <= 1e-8);
  CHECK((u.transpose() * u - Eigen::MatrixXd::Identity(9, 9)).norm() <= 1e-10);
}

TEST_CASE("tridiag_eig rejects non-finite input") {
  TridiagMatrix b(3);
  b.diag[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(linalg::tridiag_eig(b), NumericError);
}

TEST_CASE("project_out self and orthogonal cases") {
  const TallMatrix d = testsup::random_orthonormal(8, 3, 5);

  // a basis column projects to zero
  const Vector h0 = d.col_vector(0);
  const Vector p0 = linalg::project_out(h0, d, 1);
  CHECK(linalg::norm_inf(p0) <= 1e-12);

  // a vector orthogonal to the active columns is unchanged
  Vector h = testsup::random_vector(8, 6);
  h = linalg::project_out(h, d, 3);  // now orthogonal to all three
  const Vector p = linalg::project_out(h, d, 3);
  CHECK(testsup::max_abs_diff(p, h) <= 1e-12 * std::max(1.0, linalg::norm_inf(h)));
}

TEST_CASE("project_out matches the materialized projector") {
  const TallMatrix d = testsup::random_orthonormal(8, 3, 15);
  const Vector h = testsup::random_vector(8, 16);
  const Vector got = linalg::project_out(h, d, 3);

  const Eigen::MatrixXd dd = testsup::to_eigen(d);
  const Eigen::VectorXd want =
      (Eigen::MatrixXd::Identity(8, 8) - dd * dd.transpose()) * testsup::to_eigen(h);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(std::abs(got[i] - want(static_cast<long>(i))) <= 1e-10);
  }

  // idempotent
  const Vector twice = linalg::project_out(got, d, 3);
  CHECK(testsup::max_abs_diff(twice, got) <= 1e-10);

  // result orthogonal to each active column
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(std::abs(linalg::dot(d.col(j), got)) <= 1e-8 * linalg::norm2(h));
  }
}

TEST_CASE("project_out dimension errors") {
  const TallMatrix d(8, 3);
  CHECK_THROWS_AS(linalg::project_out(Vector(7, 0.0), d, 2), DimensionError);
  CHECK_THROWS_AS(linalg::project_out(Vector(8, 0.0), d, 4), DimensionError);
}

TEST_CASE("parallel kernels are bitwise identical to the serial reference") {
  const TallMatrix d = testsup::random_orthonormal(500, 7, 40);
  const Vector h = testsup::random_vector(500, 41);

  kernels::set_parallel(false);
  const Vector serial = linalg::project_out(h, d, 7);
  const Vector mt_serial = linalg::matvec_transpose(d, h);
  kernels::set_parallel(true);
  const Vector parallel = linalg::project_out(h, d, 7);
  const Vector mt_parallel = linalg::matvec_transpose(d, h);

  CHECK(std::memcmp(serial.data(), parallel.data(), serial.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(mt_serial.data(), mt_parallel.data(), mt_serial.size() * sizeof(double)) == 0);
}

TEST_SUITE_END();
