#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "core/lbfgs.hpp"

using namespace gom;

namespace {

double rosenbrock(const Eigen::VectorXd& x, Eigen::VectorXd* g) {
  const int n = static_cast<int>(x.size());
  double f = 0.0;
  if (g) g->setZero(n);
  for (int i = 0; i + 1 < n; ++i) {
    const double a = 1.0 - x[i];
    const double b = x[i + 1] - x[i] * x[i];
    f += a * a + 100.0 * b * b;
    if (g) {
      (*g)[i] += -2.0 * a - 400.0 * x[i] * b;
      (*g)[i + 1] += 200.0 * b;
    }
  }
  return f;
}

}  // namespace

TEST_CASE("separable quadratic is solved to the gradient tolerance") {
  Eigen::VectorXd a(4), c(4);
  a << 1.0, 4.0, 9.0, 0.5;
  c << -1.0, 2.0, 0.25, 10.0;
  GradObjective f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    Eigen::VectorXd r = x - c;
    if (g) *g = a.cwiseProduct(r);
    return 0.5 * r.dot(a.cwiseProduct(r));
  };
  OptimResult r = minimize_lbfgs(f, Eigen::VectorXd::Zero(4));
  CHECK(r.converged);
  CHECK(r.grad_norm <= 1e-8);
  CHECK((r.x - c).lpNorm<Eigen::Infinity>() <= 1e-7);
  CHECK(r.value <= 1e-14);
  CHECK_FALSE(r.used_fallback);
}

TEST_CASE("rosenbrock 2d from the standard start") {
  Eigen::VectorXd x0(2);
  x0 << -1.2, 1.0;
  OptimResult r = minimize_lbfgs(rosenbrock, x0);
  CHECK(r.value <= 1e-12);
  CHECK(std::abs(r.x[0] - 1.0) <= 1e-5);
  CHECK(std::abs(r.x[1] - 1.0) <= 1e-5);
}

TEST_CASE("rosenbrock 10d from zeros") {
  OptimResult r = minimize_lbfgs(rosenbrock, Eigen::VectorXd::Zero(10));
  CHECK(r.value <= 1e-10);
  CHECK((r.x - Eigen::VectorXd::Ones(10)).lpNorm<Eigen::Infinity>() <= 1e-4);
}

TEST_CASE("ill-conditioned quadratic still reaches the minimizer") {
  // condition number 1e6 across the diagonal
  const int n = 6;
  Eigen::VectorXd a(n);
  for (int i = 0; i < n; ++i) a[i] = std::pow(10.0, i);
  GradObjective f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g) *g = a.cwiseProduct(x);
    return 0.5 * x.dot(a.cwiseProduct(x));
  };
  OptimResult r = minimize_lbfgs(f, Eigen::VectorXd::Ones(n));
  CHECK(r.value <= 1e-12);
  CHECK(r.x.lpNorm<Eigen::Infinity>() <= 1e-5);
}

TEST_CASE("same start gives bitwise identical results") {
  Eigen::VectorXd x0(2);
  x0 << -1.2, 1.0;
  OptimResult r1 = minimize_lbfgs(rosenbrock, x0);
  OptimResult r2 = minimize_lbfgs(rosenbrock, x0);
  CHECK(r1.x[0] == r2.x[0]);
  CHECK(r1.x[1] == r2.x[1]);
  CHECK(r1.value == r2.value);
  CHECK(r1.iterations == r2.iterations);
}

TEST_CASE("broken gradient falls back to the derivative-free search") {
  Eigen::VectorXd c(3);
  c << 1.0, -2.0, 0.5;
  GradObjective f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g) g->setConstant(3, std::numeric_limits<double>::quiet_NaN());
    return (x - c).squaredNorm();
  };
  OptimResult r = minimize_lbfgs(f, Eigen::VectorXd::Zero(3));
  CHECK(r.used_fallback);
  CHECK(r.value <= 1e-8);
  CHECK((r.x - c).lpNorm<Eigen::Infinity>() <= 1e-4);
}

TEST_CASE("fallback can be disabled") {
  GradObjective f = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g) g->setConstant(x.size(), std::numeric_limits<double>::quiet_NaN());
    return x.squaredNorm();
  };
  OptimOptions opts;
  opts.allow_fallback = false;
  OptimResult r = minimize_lbfgs(f, Eigen::VectorXd::Ones(2), opts);
  CHECK_FALSE(r.used_fallback);
  CHECK_FALSE(r.converged);
}

TEST_CASE("nelder-mead minimizes a quadratic without derivatives") {
  Eigen::VectorXd c(3);
  c << 2.0, -1.0, 4.0;
  PlainObjective f = [&](const Eigen::VectorXd& x) { return (x - c).squaredNorm(); };
  OptimResult r = minimize_nelder_mead(f, Eigen::VectorXd::Zero(3));
  CHECK(r.value <= 1e-9);
  CHECK((r.x - c).lpNorm<Eigen::Infinity>() <= 1e-4);
}

TEST_CASE("nelder-mead handles a nonsmooth objective") {
  PlainObjective f = [](const Eigen::VectorXd& x) { return x.cwiseAbs().sum(); };
  Eigen::VectorXd x0(2);
  x0 << 3.0, -2.0;
  OptimResult r = minimize_nelder_mead(f, x0);
  CHECK(r.value <= 1e-6);
}
