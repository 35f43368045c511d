#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "core/dataset.hpp"
#include "core/error.hpp"
#include "core/kernels.hpp"
#include "core/linalg.hpp"
#include "core/rng.hpp"
#include "core/tune.hpp"

using namespace gom;

namespace {

Eigen::MatrixXd random_matrix(int n, int d, uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd X(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) X(i, j) = rng.uniform(-1.0, 1.0);
  return X;
}

}  // namespace

TEST_CASE("kernel_eval closed forms") {
  Eigen::RowVectorXd x(2), y(2);
  x << 1.0, 2.0;
  y << -0.5, 0.25;
  const double dot = 1.0 * -0.5 + 2.0 * 0.25;
  const double r2 = (x - y).squaredNorm();
  const double r = std::sqrt(r2);

  KernelSpec g;
  g.family = KernelFamily::gaussian;
  CHECK(kernel_eval(g, x, y) == doctest::Approx(std::exp(-0.5 * r2)).epsilon(1e-14));

  KernelSpec p;
  p.family = KernelFamily::polynomial;
  p.degree = 3;
  CHECK(kernel_eval(p, x, y) == doctest::Approx(std::pow(1.0 + dot / 3.0, 3)).epsilon(1e-14));

  KernelSpec e;
  e.family = KernelFamily::exponential;
  CHECK(kernel_eval(e, x, y) == doctest::Approx(std::exp(dot)).epsilon(1e-14));

  KernelSpec m;
  m.family = KernelFamily::matern;
  m.nu = 0.5;
  CHECK(kernel_eval(m, x, y) == doctest::Approx(std::exp(-r)).epsilon(1e-14));
  m.nu = 1.5;
  CHECK(kernel_eval(m, x, y) ==
        doctest::Approx((1.0 + std::sqrt(3.0) * r) * std::exp(-std::sqrt(3.0) * r))
            .epsilon(1e-14));
  m.nu = 2.5;
  double a = std::sqrt(5.0) * r;
  CHECK(kernel_eval(m, x, y) ==
        doctest::Approx((1.0 + a + a * a / 3.0) * std::exp(-a)).epsilon(1e-14));
}

TEST_CASE("unsupported kernel parameters are rejected") {
  Eigen::RowVectorXd x(2), y(2);
  x.setZero();
  y.setOnes();
  KernelSpec m;
  m.family = KernelFamily::matern;
  m.nu = 2.0;
  CHECK_THROWS_AS(kernel_eval(m, x, y), Error);
  KernelSpec bl;
  bl.family = KernelFamily::beppo_levi;
  bl.bl_order = 1;  // needs 2*order > d = 2
  CHECK_THROWS_AS(kernel_eval(bl, x, y), Error);
}

TEST_CASE("gram matches pairwise evaluation and is PSD") {
  Eigen::MatrixXd X = random_matrix(12, 3, 5);
  KernelSpec spec;
  spec.family = KernelFamily::gaussian;
  GramBundle gb = gram(X, spec, {0, 1}, {2, 3, 4}, {});
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 12; ++j)
      CHECK(gb.K(i, j) == doctest::Approx(kernel_eval(spec, X.row(i), X.row(j))).epsilon(1e-14));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gb.K);
  CHECK(es.eigenvalues().minCoeff() >= -1e-10);
  CHECK_FALSE(gb.conditional);
  CHECK(gb.G.rows() == 0);
}

TEST_CASE("gram block views select the requested rows") {
  Eigen::MatrixXd X = random_matrix(6, 2, 9);
  KernelSpec spec;
  GramBundle gb = gram(X, spec, {0, 2}, {1, 3, 4, 5}, {});
  Eigen::MatrixXd K10 = gb.K10();
  CHECK(K10.rows() == 2);
  CHECK(K10.cols() == 4);
  CHECK(K10(1, 2) == gb.K(2, 4));
  Eigen::MatrixXd K00 = gb.K00();
  CHECK(K00(3, 0) == gb.K(5, 1));
}

TEST_CASE("diagonal rescale multiplies coordinates by exp(theta)") {
  Eigen::MatrixXd X = random_matrix(7, 2, 11);
  Rescale rs;
  rs.kind = RescaleKind::diag;
  rs.theta.resize(2);
  rs.theta << 0.3, -0.8;
  KernelSpec spec;
  GramBundle a = gram(X, spec, {}, {}, rs);
  Eigen::MatrixXd Z = X;
  Z.col(0) *= std::exp(0.3);
  Z.col(1) *= std::exp(-0.8);
  GramBundle b = gram(Z, spec, {}, {}, {});
  CHECK((a.K - b.K).lpNorm<Eigen::Infinity>() <= 1e-14);
}

TEST_CASE("full rescale matrix is lower triangular with positive diagonal") {
  Rescale rs;
  rs.kind = RescaleKind::full;
  rs.theta.resize(6);  // d = 3
  rs.theta << 0.1, 0.5, -0.2, -0.3, 0.7, 0.4;
  Eigen::MatrixXd R = rs.matrix(3);
  CHECK(R.rows() == 3);
  CHECK(R.cols() == 3);
  CHECK(R(0, 1) == 0.0);
  CHECK(R(0, 2) == 0.0);
  CHECK(R(1, 2) == 0.0);
  CHECK(R(0, 0) > 0.0);
  CHECK(R(1, 1) > 0.0);
  CHECK(R(2, 2) > 0.0);
  CHECK(rs.n_params(3) == 6);
  CHECK(Rescale::full_param_count(3) == 6);
}

TEST_CASE("null space features are graded lexicographic monomials") {
  Eigen::MatrixXd X(2, 2);
  X << 2.0, 3.0, -1.0, 0.5;
  Eigen::MatrixXd G2 = null_space_features(X, 2);
  REQUIRE(G2.rows() == 3);  // 1, x1, x2
  CHECK(G2(0, 0) == 1.0);
  CHECK(G2(1, 0) == 2.0);
  CHECK(G2(2, 0) == 3.0);
  CHECK(G2(1, 1) == -1.0);

  Eigen::MatrixXd G3 = null_space_features(X, 3);
  REQUIRE(G3.rows() == 6);  // 1, x1, x2, x1^2, x1 x2, x2^2
  CHECK(G3(3, 0) == 4.0);
  CHECK(G3(4, 0) == 6.0);
  CHECK(G3(5, 0) == 9.0);
}

TEST_CASE("beppo_levi gram is conditionally positive semidefinite") {
  for (int d : {1, 2, 3}) {
    Eigen::MatrixXd X = random_matrix(14, d, 100 + d);
    KernelSpec spec;
    spec.family = KernelFamily::beppo_levi;
    spec.bl_order = 2;
    GramBundle gb = gram(X, spec, {}, {}, {});
    CHECK(gb.conditional);
    CHECK(gb.G.rows() == 1 + d);
    // project random directions onto the null space of G and test v' K v >= 0
    Eigen::MatrixXd N = null_space_basis(gb.G);
    REQUIRE(N.cols() > 0);
    Rng rng(7);
    for (int rep = 0; rep < 20; ++rep) {
      Eigen::VectorXd z(N.cols());
      for (int i = 0; i < z.size(); ++i) z[i] = rng.normal();
      Eigen::VectorXd v = N * z;
      CHECK(v.dot(gb.K * v) >= -1e-8 * v.squaredNorm());
    }
  }
}

TEST_CASE("gram_with_grads matches central differences") {
  const double h = 1e-6;
  auto check_family = [&](KernelFamily fam, RescaleKind kind) {
    Eigen::MatrixXd X = random_matrix(8, 2, 33);
    KernelSpec spec;
    spec.family = fam;
    Rescale rs;
    rs.kind = kind;
    const int P = rs.n_params(2);
    rs.theta.resize(P);
    Rng rng(3);
    for (int p = 0; p < P; ++p) rs.theta[p] = rng.uniform(-0.5, 0.5);

    Eigen::MatrixXd K;
    std::vector<Eigen::MatrixXd> dK;
    gram_with_grads(X, spec, rs, K, dK);
    REQUIRE(static_cast<int>(dK.size()) == P);

    GramBundle base = gram(X, spec, {}, {}, rs);
    CHECK((K - base.K).lpNorm<Eigen::Infinity>() <= 1e-13);

    for (int p = 0; p < P; ++p) {
      Rescale up = rs, dn = rs;
      up.theta[p] += h;
      dn.theta[p] -= h;
      Eigen::MatrixXd fd =
          (gram(X, spec, {}, {}, up).K - gram(X, spec, {}, {}, dn).K) / (2.0 * h);
      CHECK((fd - dK[p]).lpNorm<Eigen::Infinity>() <= 1e-6);
    }
  };
  check_family(KernelFamily::gaussian, RescaleKind::diag);
  check_family(KernelFamily::gaussian, RescaleKind::full);
  check_family(KernelFamily::polynomial, RescaleKind::diag);
  check_family(KernelFamily::polynomial, RescaleKind::full);
  check_family(KernelFamily::matern, RescaleKind::diag);
  check_family(KernelFamily::exponential, RescaleKind::full);
}

TEST_CASE("quadratic feature map reproduces the degree-2 polynomial gram") {
  Eigen::MatrixXd X = random_matrix(10, 3, 55);
  Eigen::VectorXd y = random_matrix(10, 1, 56);
  QuadFeatureMl ml;
  ml.init(X, y);
  CHECK(ml.m == 1 + 3 + 6);

  Eigen::VectorXd theta(3);
  theta << 0.2, -0.4, 0.1;
  Eigen::MatrixXd Phi;
  ml.features(theta, Phi, nullptr);

  Rescale rs;
  rs.kind = RescaleKind::diag;
  rs.theta = theta;
  KernelSpec spec;
  spec.family = KernelFamily::polynomial;
  spec.degree = 2;
  GramBundle gb = gram(X, spec, {}, {}, rs);
  CHECK((Phi * Phi.transpose() - gb.K).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("quadratic feature jacobians match central differences") {
  Eigen::MatrixXd X = random_matrix(6, 2, 77);
  Eigen::VectorXd y = random_matrix(6, 1, 78);
  QuadFeatureMl ml;
  ml.init(X, y);
  Eigen::VectorXd theta(2);
  theta << 0.15, -0.3;
  Eigen::MatrixXd Phi;
  std::vector<Eigen::MatrixXd> dPhi;
  ml.features(theta, Phi, &dPhi);
  REQUIRE(dPhi.size() == 2);
  const double h = 1e-6;
  for (int k = 0; k < 2; ++k) {
    Eigen::VectorXd up = theta, dn = theta;
    up[k] += h;
    dn[k] -= h;
    Eigen::MatrixXd pu, pd;
    ml.features(up, pu, nullptr);
    ml.features(dn, pd, nullptr);
    Eigen::MatrixXd fd = (pu - pd) / (2.0 * h);
    CHECK((fd - dPhi[k]).lpNorm<Eigen::Infinity>() <= 1e-7);
  }
}
