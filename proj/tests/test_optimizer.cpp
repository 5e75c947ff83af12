#include <doctest.h>

#include <cmath>
#include <cstring>

#include "dho2/optimizer.hpp"
#include "dho2/oracle.hpp"
#include "test_support.hpp"

using namespace dho2;

TEST_SUITE_BEGIN("optimizer");

namespace {

BaseOptimizer zero_optimizer(std::size_t n) {
  BaseConfig cfg;
  cfg.kind = BaseKind::Sgd;
  cfg.lr = 0.0;
  return BaseOptimizer(cfg, n);
}

EseResult ese_from_dense(const Eigen::MatrixXd& h, std::size_t k, std::size_t l) {
  const auto n = static_cast<std::size_t>(h.rows());
  const auto res = lanczos_single(n, testsup::matrix_hvp(h), n, 17);
  return extract_ese(res, k, l);
}

}  // namespace

TEST_CASE("sgd step is -lr g") {
  BaseConfig cfg;
  cfg.kind = BaseKind::Sgd;
  cfg.lr = 0.1;
  BaseOptimizer opt(cfg, 2);
  const Vector d = opt.step({1, -2}, {0, 0});
  CHECK(d[0] == doctest::Approx(-0.1).epsilon(1e-15));
  CHECK(d[1] == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("adam first step matches a hand computation") {
  BaseConfig cfg;
  cfg.kind = BaseKind::Adam;
  cfg.lr = 1e-3;
  BaseOptimizer opt(cfg, 3);
  const Vector g{0.5, -2.0, 3.0};
  const Vector d = opt.step(g, Vector(3, 0.0));
  for (std::size_t i = 0; i < 3; ++i) {
    // after bias correction the first step is -lr g / (|g| + eps)
    const double want = -cfg.lr * g[i] / (std::abs(g[i]) + cfg.eps);
    CHECK(d[i] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("zero gradient with zero moments") {
  BaseConfig cfg;
  cfg.kind = BaseKind::Momentum;
  cfg.lr = 0.5;
  BaseOptimizer momentum(cfg, 2);
  CHECK(linalg::norm_inf(momentum.step({0, 0}, {1, 1})) == 0.0);

  cfg.kind = BaseKind::AdamW;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.05;
  BaseOptimizer adamw(cfg, 2);
  const Vector w{2.0, -4.0};
  const Vector d = adamw.step({0, 0}, w);
  // pure decoupled decay: -lr * wd * w
  CHECK(d[0] == doctest::Approx(-0.1 * 0.05 * 2.0).epsilon(1e-12));
  CHECK(d[1] == doctest::Approx(0.1 * 0.05 * 4.0).epsilon(1e-12));
}

TEST_CASE("non-finite gradient is a numeric error") {
  BaseOptimizer opt(BaseConfig{}, 2);
  CHECK_THROWS_AS(opt.step({1.0, std::numeric_limits<double>::infinity()}, {0, 0}), NumericError);
}

TEST_CASE("fosi deltas on a diagonal quadratic") {
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(2, 2);
  h.diagonal() << 4.0, 1.0;
  EseResult ese;
  ese.k = 1;
  ese.eigvals = {4.0};
  ese.eigvecs = TallMatrix(2, 1);
  ese.eigvecs(0, 0) = 1.0;

  auto zero = zero_optimizer(2);
  const auto d = fosi_deltas({4, 1}, ese, zero, {0, 0}, 1.0);
  CHECK(d.newton[0] == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(d.newton[1] == 0.0);
  CHECK(linalg::norm_inf(d.base) == 0.0);
}

TEST_CASE("gradient orthogonal to the subspace leaves newton at zero") {
  EseResult ese;
  ese.k = 1;
  ese.eigvals = {2.0};
  ese.eigvecs = TallMatrix(3, 1);
  ese.eigvecs(0, 0) = 1.0;

  BaseConfig cfg;
  cfg.kind = BaseKind::Sgd;
  cfg.lr = 0.5;
  BaseOptimizer sgd(cfg, 3);
  const Vector g{0.0, 2.0, -4.0};
  const auto d = fosi_deltas(g, ese, sgd, Vector(3, 0.0), 1.0);
  CHECK(linalg::norm_inf(d.newton) == 0.0);
  // base step is P O(g) = O(g) here since g is already orthogonal
  CHECK(d.base[1] == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(d.base[2] == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("full-spectrum newton step lands on the minimizer") {
  Vector spectrum{9.0, 4.0, 2.5, 1.0, 0.5};
  const QuadraticOracle q(spectrum, 5);
  const Eigen::MatrixXd h = testsup::materialize([&](const Vector& v) { return q.apply_h(v); }, 5);
  const auto ese = ese_from_dense(h, 5, 0);

  const Vector w0 = testsup::random_vector(5, 3);
  const Vector g = q.apply_h(w0);

  auto zero = zero_optimizer(5);
  const auto d = fosi_deltas(g, ese, zero, w0, 1.0);
  Vector w1 = linalg::add(w0, d.newton);
  linalg::axpy(1.0, d.base, w1);
  CHECK(linalg::norm2(w1) <= 1e-8);  // minimizer of (1/2) w^T H w is 0
}

TEST_CASE("admm w-update definitional cases") {
  AdmmState st = make_admm_state(Vector{0, 0, 0}, 2.0);
  st.pi = {2, 2, 2};
  admm_w_update(st);
  CHECK(st.w == Vector{1, 1, 1});

  st.pi = {0, 0, 0};
  st.w_a = {3, -1, 2};
  admm_w_update(st);
  CHECK(st.w == st.w_a);
}

TEST_CASE("admm w-update is a stationary point of the augmented lagrangian") {
  // L(w, w_a, pi) = f(w_a) + <w_a - w, pi> + sigma/2 ||w_a - w||^2
  const double sigma = 0.7;
  AdmmState st = make_admm_state(testsup::random_vector(6, 51), sigma);
  st.w_a = testsup::random_vector(6, 52);
  st.pi = testsup::random_vector(6, 53);
  admm_w_update(st);

  auto lagrangian_w_terms = [&](const Vector& w) {
    double inner = 0.0;
    double penalty = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double diff = st.w_a[i] - w[i];
      inner += diff * st.pi[i];
      penalty += diff * diff;
    }
    return inner + 0.5 * sigma * penalty;
  };

  const double eps = 1e-6;
  for (std::size_t i = 0; i < st.w.size(); ++i) {
    Vector wp = st.w;
    Vector wm = st.w;
    wp[i] += eps;
    wm[i] -= eps;
    const double fd = (lagrangian_w_terms(wp) - lagrangian_w_terms(wm)) / (2 * eps);
    CHECK(std::abs(fd) <= 1e-6);
  }
}

TEST_CASE("admm deltas reduce to fosi deltas at pi = 0 and sigma = 0") {
  const Eigen::MatrixXd h = testsup::random_symmetric(8, 99);
  const auto ese = ese_from_dense(h, 2, 1);
  const Vector g = testsup::random_vector(8, 98);
  const Vector w = testsup::random_vector(8, 97);

  BaseConfig cfg;
  cfg.kind = BaseKind::Adam;
  BaseOptimizer a(cfg, 8);
  BaseOptimizer b(cfg, 8);

  const auto fosi = fosi_deltas(g, ese, a, w, 0.3);
  const auto admm = admm_deltas(g, Vector(8, 0.0), ese, b, w, 0.3, 0.0);
  CHECK(testsup::max_abs_diff(fosi.newton, admm.newton) <= 1e-12);
  CHECK(testsup::max_abs_diff(fosi.base, admm.base) <= 1e-12);
}

TEST_CASE("admm newton coefficients include the penalty") {
  EseResult ese;
  ese.k = 1;
  ese.eigvals = {4.0};
  ese.eigvecs = TallMatrix(2, 1);
  ese.eigvecs(0, 0) = 1.0;

  auto zero = zero_optimizer(2);
  const auto d = admm_deltas({4, 1}, Vector{0, 0}, ese, zero, {0, 0}, 1.0, 1.0);
  CHECK(d.newton[0] == doctest::Approx(-4.0 / 5.0).epsilon(1e-14));
  CHECK(d.newton[1] == 0.0);
}

TEST_CASE("delta orthogonality holds for random draws") {
  const Eigen::MatrixXd h = testsup::random_symmetric(12, 7);
  const auto ese = ese_from_dense(h, 3, 1);

  BaseConfig cfg;
  cfg.kind = BaseKind::Adam;
  BaseOptimizer opt(cfg, 12);
  Rng rng(4242);
  for (int trial = 0; trial < 25; ++trial) {
    Vector g(12);
    Vector pi(12);
    rng.fill_normal(g);
    rng.fill_normal(pi);
    const auto d = admm_deltas(g, pi, ese, opt, Vector(12, 0.0), 0.2, 0.05);
    const double dot = linalg::dot(d.newton, d.base);
    const double bound = 1e-8 * linalg::norm2(d.newton) * linalg::norm2(d.base);
    CHECK(std::abs(dot) <= std::max(bound, 1e-14));

    // subspace split of the driving gradient
    const Vector gt = linalg::add(g, pi);
    const Vector c = linalg::matvec_transpose(ese.eigvecs, gt);
    const Vector g1 = linalg::matvec(ese.eigvecs, c);
    const Vector g2 = linalg::sub(gt, g1);
    CHECK(testsup::max_abs_diff(linalg::add(g1, g2), gt) <= 1e-10);
    CHECK(std::abs(linalg::dot(g1, g2)) <= 1e-8 * linalg::dot(gt, gt));
  }
}

TEST_CASE("eigenvalue floor prevents division blowups") {
  EseResult ese;
  ese.k = 1;
  ese.l = 1;
  ese.eigvals = {1e-12, -1e-13};  // nearly singular directions
  ese.eigvecs = TallMatrix(3, 2);
  ese.eigvecs(0, 0) = 1.0;
  ese.eigvecs(1, 1) = 1.0;

  auto zero = zero_optimizer(3);
  const auto d = fosi_deltas({1, 1, 1}, ese, zero, Vector(3, 0.0), 1.0, 1e-6);
  CHECK(linalg::all_finite(d.newton));
  CHECK(std::abs(d.newton[0]) <= 1.0 / 1e-6 + 1.0);
  // the negative eigenvalue keeps its sign under the floor
  CHECK(d.newton[1] > 0.0);
}

TEST_CASE("admm dual update") {
  AdmmState st = make_admm_state(Vector{1, 1}, 2.0);
  st.w = st.w_a;
  st.pi = {0.5, -0.5};
  const Vector before = st.pi;
  admm_dual_update(st);
  CHECK(st.pi == before);  // w_a == w leaves pi unchanged

  st.w_a = {2, 2};
  st.w = {1, 1};
  st.pi = {0, 0};
  admm_dual_update(st);
  CHECK(st.pi == Vector{2, 2});
}

TEST_CASE("admm state requires positive sigma") {
  CHECK_THROWS_AS(make_admm_state(Vector{1}, 0.0), ArgumentError);
  CHECK_THROWS_AS(make_admm_state(Vector{1}, -1.0), ArgumentError);
}

TEST_SUITE_END();
