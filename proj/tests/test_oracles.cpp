#include <cmath>
#include <memory>

#include "doctest.h"
#include "ngvi/oracles.hpp"
#include "test_common.hpp"

using namespace ngvi;
using namespace testutil;

namespace {

// E[f(a)], a ~ N(mu, s^2), by the trapezoid rule on mu +- 12 s; the
// reference used throughout instead of the library's quadrature.
template <class F>
double gauss_expect(F f, double mu, double s, int points = 20001) {
  if (s == 0.0) return f(mu);
  const double lo = -12.0, hi = 12.0, h = (hi - lo) / (points - 1);
  double sum = 0.0;
  for (int k = 0; k < points; ++k) {
    const double z = lo + k * h;
    const double w = (k == 0 || k == points - 1) ? 0.5 : 1.0;
    sum += w * f(mu + s * z) * std::exp(-0.5 * z * z);
  }
  return sum * h / std::sqrt(2.0 * M_PI);
}

double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }
double splus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

struct Logistic {
  Matrix x;
  Vector y;
  double beta;
  ProblemSpec spec;
};

Logistic random_logistic(Eigen::Index n, Eigen::Index d, double beta, std::mt19937_64& rng) {
  Matrix x = random_matrix(n, d, rng) / std::sqrt(static_cast<double>(d));
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = normal(rng) > 0 ? 1.0 : -1.0;
  auto dm = std::make_shared<const data::DesignMatrix>(data::DesignMatrix::from_dense(x, y));
  return {x, y, beta, make_logistic_problem(dm, beta)};
}

// Reference moments by per-row trapezoid integration.
std::pair<Vector, Matrix> logistic_reference(const Logistic& p, const GaussianParams& q) {
  const Eigen::Index d = q.dim();
  const Matrix v = q.covariance();
  Vector g = p.beta * q.mean();
  Matrix h = p.beta * Matrix::Identity(d, d);
  for (Eigen::Index i = 0; i < p.x.rows(); ++i) {
    const Vector xi = p.x.row(i).transpose();
    const double mu = xi.dot(q.mean()), s = std::sqrt(xi.dot(v * xi)), y = p.y(i);
    g += gauss_expect([&](double a) { return -y * sig(-y * a); }, mu, s) * xi;
    h += gauss_expect([&](double a) { return sig(a) * (1.0 - sig(a)); }, mu, s) * xi *
         xi.transpose();
  }
  return {g, h};
}

double logistic_loss_reference(const Logistic& p, const GaussianParams& q) {
  const Matrix v = q.covariance();
  double out = 0.5 * p.beta * (q.mean().squaredNorm() + v.trace());
  for (Eigen::Index i = 0; i < p.x.rows(); ++i) {
    const Vector xi = p.x.row(i).transpose();
    const double mu = xi.dot(q.mean()), s = std::sqrt(xi.dot(v * xi)), y = p.y(i);
    out += gauss_expect([&](double a) { return splus(-y * a); }, mu, s);
  }
  return out;
}

}  // namespace

TEST_CASE("problem constructors validate") {
  CHECK_THROWS_AS(make_quadratic_problem(Matrix::Identity(2, 2), Vector::Zero(3)), DimensionError);
  Matrix indefinite(2, 2);
  indefinite << 1, 2, 2, 1;
  CHECK_THROWS_AS(make_quadratic_problem(indefinite, Vector::Zero(2)), FactorizationError);
  CHECK_THROWS_AS(make_quadratic_problem(Matrix::Identity(2, 2), Vector::Zero(2), 0.0, 0.0),
                  ConfigError);
  CHECK_THROWS_AS(make_logistic_problem(nullptr, 0.1), ConfigError);
  std::mt19937_64 rng(1);
  auto p = random_logistic(5, 2, 0.1, rng);
  CHECK_THROWS_AS(make_logistic_problem(p.spec.logistic().data, -1.0), ConfigError);
}

TEST_CASE("normal quadrature rule") {
  CHECK_THROWS_AS(normal_quadrature(2), ConfigError);
  for (int n : {3, 16, 64}) {
    const auto& r = normal_quadrature(n);
    REQUIRE(r.nodes.size() == static_cast<std::size_t>(n));
    double w = 0, m2 = 0, m4 = 0, m1 = 0;
    for (int k = 0; k < n; ++k) {
      w += r.weights[k];
      m1 += r.weights[k] * r.nodes[k];
      m2 += r.weights[k] * std::pow(r.nodes[k], 2);
      m4 += r.weights[k] * std::pow(r.nodes[k], 4);
    }
    CHECK(w == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(std::abs(m1) < 1e-13);
    CHECK(m2 == doctest::Approx(1.0).epsilon(1e-12));
    if (n >= 3) CHECK(m4 == doctest::Approx(3.0).epsilon(1e-12));
  }
}

TEST_CASE("quadratic moments") {
  const ProblemSpec id = make_quadratic_problem(Matrix::Identity(3, 3), Vector::Zero(3));
  Vector m(3);
  m << 1, -2, 0.5;
  const GaussianParams q(m, Matrix::Identity(3, 3));
  const MomentEstimates mo = quadratic_moments(q, id);
  CHECK(mo.grad == m);
  CHECK(mo.hess == Matrix::Identity(3, 3));
  CHECK(mo.bias_tag == BiasTag::exact);

  std::mt19937_64 rng(2);
  const Matrix a = random_spd(4, rng);
  const Vector b = random_vector(4, rng);
  const ProblemSpec p = make_quadratic_problem(a, b);
  const GaussianParams opt = quadratic_optimum(p);
  const MomentEstimates at = quadratic_moments(opt, p);
  CHECK(at.grad.norm() < 1e-12);
  // Fixed-point condition: H = gamma V^{-1}.
  CHECK((at.hess - opt.precision()).norm() < 1e-10);
  CHECK_THROWS_AS(logistic_moments(q, id, OracleConfig{}), ConfigError);
}

TEST_CASE("expected loss and objective on quadratics") {
  for (Eigen::Index d = 1; d <= 4; ++d) {
    const ProblemSpec p = make_quadratic_problem(Matrix::Identity(d, d), Vector::Zero(d));
    const GaussianParams q(Vector::Zero(d), Matrix::Identity(d, d));
    CHECK(expected_loss(q, p, OracleConfig{}) == doctest::Approx(0.5 * d));
    CHECK(elbo(q, p, OracleConfig{}) == doctest::Approx(0.5 * d + neg_entropy(q)));
    const ProblemSpec p0 = make_quadratic_problem(Matrix::Identity(d, d), Vector::Zero(d), 0.0, 1e-300);
    CHECK(elbo(q, p0, OracleConfig{}) == doctest::Approx(0.5 * d));
  }
  std::mt19937_64 rng(4);
  for (int t = 0; t < 10; ++t) {
    const Matrix a = random_spd(3, rng);
    const Vector b = random_vector(3, rng);
    const ProblemSpec p = make_quadratic_problem(a, b, 0.7);
    const GaussianParams q = random_params(3, rng);
    const Matrix v = q.covariance();
    const double ref = 0.5 * (q.mean().dot(a * q.mean()) + (a * v).trace()) - b.dot(q.mean()) + 0.7;
    CHECK(expected_loss(q, p, OracleConfig{}) == doctest::Approx(ref).epsilon(1e-12));
  }
}

TEST_CASE("the analytic optimum beats perturbed points on the regression toy") {
  Matrix a(2, 2);
  a << 7.625, 4.117, 4.117, 2.875;  // rotated diag(10, 0.5)
  Vector b(2);
  b << 1.0, 2.0;
  const ProblemSpec p = make_quadratic_problem(a, b);
  const GaussianParams opt = quadratic_optimum(p);
  const double best = elbo(opt, p, OracleConfig{});
  CHECK(best == doctest::Approx(quadratic_optimal_elbo(p)).epsilon(1e-12));
  for (double dm : {-0.1, 0.0, 0.1}) {
    for (double dc : {0.9, 1.0, 1.1}) {
      if (dm == 0.0 && dc == 1.0) continue;
      const GaussianParams q(opt.mean() + Vector::Constant(2, dm), dc * opt.chol());
      CHECK(elbo(q, p, OracleConfig{}) > best);
    }
  }
}

TEST_CASE("logistic moments match a trapezoid reference") {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 5; ++t) {
    const auto p = random_logistic(20, 3, 0.1, rng);
    const GaussianParams q = random_params(3, rng);
    const auto [g, h] = logistic_reference(p, q);
    const MomentEstimates mo = logistic_moments(q, p.spec, OracleConfig{});
    CHECK(mo.bias_tag == BiasTag::quadrature);
    CHECK(rel_err(mo.grad, g) < 1e-7);
    CHECK(rel_err(mo.hess, h) < 1e-7);
    CHECK(expected_loss(q, p.spec, OracleConfig{}) ==
          doctest::Approx(logistic_loss_reference(p, q)).epsilon(1e-10));
    // MeanCovariance overload agrees.
    const MomentEstimates mo2 = logistic_moments(MeanCovariance(q), p.spec, OracleConfig{});
    CHECK(rel_err(mo2.hess, mo.hess) < 1e-12);
  }
}

TEST_CASE("logistic moments in the small-covariance limit approach pointwise derivatives") {
  std::mt19937_64 rng(12);
  const auto p = random_logistic(15, 3, 0.05, rng);
  const Vector m = random_vector(3, rng);
  const GaussianParams q(m, 1e-6 * Matrix::Identity(3, 3));
  Vector g = p.beta * m;
  for (Eigen::Index i = 0; i < p.x.rows(); ++i) {
    const Vector xi = p.x.row(i).transpose();
    g += -p.y(i) * sig(-p.y(i) * xi.dot(m)) * xi;
  }
  CHECK(rel_err(logistic_moments(q, p.spec, OracleConfig{}).grad, g) < 1e-4);
  CHECK(rel_err(pointwise_grad(m, p.spec), g) < 1e-12);
}

TEST_CASE("single-point expected curvature agrees with brute-force sampling") {
  Matrix x(1, 1);
  x << 1.0;
  Vector y(1);
  y << 1.0;
  auto dm = std::make_shared<const data::DesignMatrix>(data::DesignMatrix::from_dense(x, y));
  const ProblemSpec p = make_logistic_problem(dm, 0.0);
  const GaussianParams q(Vector::Zero(1), Matrix::Identity(1, 1));
  const double quad = logistic_moments(q, p, OracleConfig{}).hess(0, 0);
  std::mt19937_64 rng(99);
  const int n = 200000;
  double sum = 0, sum2 = 0;
  for (int k = 0; k < n; ++k) {
    const double s = sig(normal(rng));
    const double v = s * (1 - s);
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum2 / n - mean * mean) / n);
  CHECK(std::abs(quad - mean) < 3.0 * se);
}

TEST_CASE("logistic Hessian stays within its curvature bounds") {
  std::mt19937_64 rng(13);
  const auto p = random_logistic(40, 4, 0.01, rng);
  const double lmax = Eigen::SelfAdjointEigenSolver<Matrix>(p.x.transpose() * p.x)
                          .eigenvalues()
                          .maxCoeff();
  for (int t = 0; t < 20; ++t) {
    GaussianParams q(3.0 * random_vector(4, rng), 2.0 * random_chol(4, rng));
    const Eigen::VectorXd eig =
        Eigen::SelfAdjointEigenSolver<Matrix>(logistic_moments(q, p.spec, OracleConfig{}).hess)
            .eigenvalues();
    CHECK(eig.minCoeff() >= 0.01 - 1e-12);
    CHECK(eig.maxCoeff() <= lmax / 4.0 + 0.01 + 1e-12);
  }
}

TEST_CASE("expected logistic loss: small-variance value and monotonicity in V") {
  Matrix x(1, 2);
  x << 1.0, 0.0;
  Vector y(1);
  y << 1.0;
  auto dm = std::make_shared<const data::DesignMatrix>(data::DesignMatrix::from_dense(x, y));
  const ProblemSpec p = make_logistic_problem(dm, 0.0);
  // With the loss softplus(-y a), a margin y a = +10 gives softplus(-10).
  Vector m(2);
  m << 10.0, 0.0;
  const GaussianParams q(m, 1e-8 * Matrix::Identity(2, 2));
  CHECK(expected_loss(q, p, OracleConfig{}) == doctest::Approx(4.5398899e-5).epsilon(1e-6));

  std::mt19937_64 rng(14);
  for (int t = 0; t < 20; ++t) {
    const auto lp = random_logistic(25, 3, 0.1, rng);
    const GaussianParams a = random_params(3, rng);
    const GaussianParams b(a.mean(), 2.0 * a.chol());
    CHECK(expected_loss(b, lp.spec, OracleConfig{}) >= expected_loss(a, lp.spec, OracleConfig{}));
  }
}

TEST_CASE("quadrature error shrinks with node count") {
  std::mt19937_64 rng(15);
  for (int t = 0; t < 5; ++t) {
    const auto p = random_logistic(10, 2, 0.0, rng);
    const GaussianParams q(2.0 * random_vector(2, rng), 3.0 * random_chol(2, rng));
    const double ref = logistic_loss_reference(p, q);
    OracleConfig c16, c64;
    c16.quadrature_nodes = 16;
    c64.quadrature_nodes = 64;
    const double e16 = std::abs(expected_loss(q, p.spec, c16) - ref);
    const double e64 = std::abs(expected_loss(q, p.spec, c64) - ref);
    CHECK(e64 <= e16 + 1e-14);
  }
}

TEST_CASE("Monte-Carlo moments") {
  std::mt19937_64 rng(16);
  const Matrix a = random_spd(3, rng);
  const ProblemSpec p = make_quadratic_problem(a, random_vector(3, rng));
  const GaussianParams q = random_params(3, rng);
  OracleConfig cfg;
  cfg.mode = OracleMode::monte_carlo;
  cfg.mc_samples = 1000000;
  cfg.mc_seed = 5;
  const MomentEstimates exact = quadratic_moments(q, p);
  const MomentEstimates mc = mc_moments(q, p, cfg);
  CHECK(mc.bias_tag == BiasTag::monte_carlo);
  // Error scale is |A C| / sqrt(N); normalize by that and by |g|.
  CHECK((mc.grad - exact.grad).norm() / std::max(exact.grad.norm(), 1.0) < 5e-3);

  cfg.mc_samples = 100;
  const auto l = random_logistic(10, 3, 0.1, rng);
  const MomentEstimates r1 = mc_moments(q, l.spec, cfg), r2 = mc_moments(q, l.spec, cfg);
  CHECK(r1.grad == r2.grad);
  CHECK(r1.hess == r2.hess);

  // One sample: pointwise derivatives at the single draw.
  cfg.mc_samples = 1;
  std::mt19937_64 replay(cfg.mc_seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Vector z(3);
  for (int j = 0; j < 3; ++j) z(j) = nd(replay);
  const Vector theta = q.mean() + q.chol() * z;
  const MomentEstimates one = mc_moments(q, l.spec, cfg);
  CHECK(rel_err(one.grad, pointwise_grad(theta, l.spec)) < 1e-14);
  CHECK(rel_err(one.hess, pointwise_hess(theta, l.spec)) < 1e-14);
  // compute_moments routes through the sampler in this mode.
  CHECK(compute_moments(q, l.spec, cfg).grad == one.grad);
  cfg.mc_samples = 0;
  CHECK_THROWS_AS(mc_moments(q, l.spec, cfg), ConfigError);
}

TEST_CASE("bias injection") {
  std::mt19937_64 rng(17);
  const Matrix a = random_spd(3, rng);
  const ProblemSpec p = make_quadratic_problem(a, random_vector(3, rng));
  const GaussianParams q = random_params(3, rng);
  const MomentEstimates base = quadratic_moments(q, p);
  const MomentEstimates same = inject_bias(base, OracleConfig{});
  CHECK(same.grad == base.grad);
  CHECK(same.hess == base.hess);
  CHECK(same.bias_tag == BiasTag::injected);

  OracleConfig cfg;
  cfg.bias_h = Matrix(0.1 * Matrix::Identity(3, 3));
  const MomentEstimates biased = compute_moments(q, p, cfg);
  CHECK((biased.hess - (a + 0.1 * Matrix::Identity(3, 3))).norm() < 1e-14);
  cfg.bias_g = Vector::Zero(2);
  CHECK_THROWS_AS(inject_bias(base, cfg), DimensionError);
}

TEST_CASE("non-convex regularizer derivatives") {
  const NonconvexTerm zero = nonconvex_reg_moments(Vector::Zero(3));
  CHECK(zero.value == 0.0);
  CHECK(zero.grad.isZero(0.0));
  CHECK(zero.hess.isApprox(2.0 * Matrix::Identity(3, 3)));
  CHECK(std::abs(nonconvex_reg_moments(Vector::Constant(1, 1e6)).grad(0)) < 1e-17);

  Vector m(2);
  m << 0.3, -1.2;
  auto value = [](const Vector& v) {
    double s = 0;
    for (Eigen::Index i = 0; i < v.size(); ++i) s += v(i) * v(i) / (1 + v(i) * v(i));
    return s;
  };
  const NonconvexTerm t = nonconvex_reg_moments(m);
  CHECK(t.value == doctest::Approx(value(m)));
  const double h = 1e-5;
  for (int i = 0; i < 2; ++i) {
    Vector p = m, q = m;
    p(i) += h;
    q(i) -= h;
    CHECK(std::abs((value(p) - value(q)) / (2 * h) - t.grad(i)) < 1e-7);
    const double fd2 = (nonconvex_reg_moments(p).grad(i) - nonconvex_reg_moments(q).grad(i)) / (2 * h);
    CHECK(std::abs(fd2 - t.hess(i, i)) < 1e-7);
  }
  CHECK(t.hess(0, 1) == 0.0);
}

TEST_CASE("objective gradients match central differences") {
  std::mt19937_64 rng(18);
  auto check = [&](const ProblemSpec& p, const GaussianParams& q, double tol) {
    const MomentEstimates mo = compute_moments(q, p, OracleConfig{});
    const double h = 1e-5;
    const Eigen::Index d = q.dim();
    for (Eigen::Index i = 0; i < d; ++i) {
      Vector a = q.mean(), b = q.mean();
      a(i) += h;
      b(i) -= h;
      const double fd = (elbo(GaussianParams(a, q.chol()), p, OracleConfig{}) -
                         elbo(GaussianParams(b, q.chol()), p, OracleConfig{})) /
                        (2 * h);
      CHECK(std::abs(fd - mo.grad(i)) <= tol * std::max(1.0, std::abs(mo.grad(i))));
    }
    // The non-convex term is evaluated at the mean: its curvature enters H
    // but the objective has no C-dependence through it.
    if (p.nonconvex_reg) return;
    const Matrix gc = lower_part((mo.hess - p.gamma * q.precision()) * q.chol());
    for (Eigen::Index j = 0; j < d; ++j) {
      for (Eigen::Index i = j; i < d; ++i) {
        Matrix a = q.chol(), b = q.chol();
        a(i, j) += h;
        b(i, j) -= h;
        const double fd = (elbo(GaussianParams(q.mean(), a), p, OracleConfig{}) -
                           elbo(GaussianParams(q.mean(), b), p, OracleConfig{})) /
                          (2 * h);
        CHECK(std::abs(fd - gc(i, j)) <= tol * std::max(1.0, std::abs(gc(i, j))));
      }
    }
  };
  for (int t = 0; t < 6; ++t) {
    ProblemSpec p = make_quadratic_problem(random_spd(3, rng), random_vector(3, rng), 0.0,
                                           t % 2 ? 0.6 : 1.0);
    if (t == 5) p.nonconvex_reg = true;
    check(p, random_params(3, rng), 1e-5);
  }
  for (int t = 0; t < 3; ++t) {
    check(random_logistic(30, 3, 0.1, rng).spec, random_params(3, rng), 1e-3);
  }
}
