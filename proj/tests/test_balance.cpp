#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "core/balance.hpp"
#include "core/dataset.hpp"
#include "core/error.hpp"
#include "core/kernels.hpp"
#include "core/rng.hpp"

using namespace gom;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

Dataset random_dataset(int n, int d, uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  ds.X.resize(n, d);
  ds.T.resize(n);
  ds.Y.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) ds.X(i, j) = rng.uniform(-1.0, 1.0);
    ds.T[i] = i < n / 3 ? 1 : 0;
    ds.Y[i] = rng.normal();
  }
  ds.reindex();
  return ds;
}

Weights simplex_weights(const Eigen::VectorXd& w) {
  Weights out;
  out.w = w;
  out.space = WeightSpace::simplex;
  return out;
}

}  // namespace

TEST_CASE("validate_weights enforces the space invariants") {
  Weights w = simplex_weights((Eigen::VectorXd(3) << 0.2, 0.3, 0.5).finished());
  CHECK_NOTHROW(validate_weights(w));

  Weights bad_sum = simplex_weights((Eigen::VectorXd(3) << 0.2, 0.3, 0.4).finished());
  CHECK_THROWS_AS(validate_weights(bad_sum), Error);

  Weights neg = simplex_weights((Eigen::VectorXd(3) << -0.1, 0.6, 0.5).finished());
  CHECK_THROWS_AS(validate_weights(neg), Error);

  Weights capped;
  capped.w = (Eigen::VectorXd(3) << 0.5, 0.3, 0.2).finished();
  capped.space = WeightSpace::b_simplex;
  capped.b = 0.4;
  CHECK_THROWS_AS(validate_weights(capped), Error);
  capped.b = 0.5;
  CHECK_NOTHROW(validate_weights(capped));

  Weights general;
  general.w = (Eigen::VectorXd(2) << -3.0, 7.5).finished();
  general.space = WeightSpace::general;
  CHECK_NOTHROW(validate_weights(general));

  Weights sub;
  sub.w = (Eigen::VectorXd(4) << 0.5, 0.0, 0.5, 0.0).finished();
  sub.space = WeightSpace::subset;
  sub.subset_size = 2;
  CHECK_NOTHROW(validate_weights(sub));
  sub.w = (Eigen::VectorXd(4) << 0.5, 0.25, 0.25, 0.0).finished();
  CHECK_THROWS_AS(validate_weights(sub), Error);  // off the uniform 1/2 grid
}

TEST_CASE("rkhs imbalance equals the explicit quadratic form") {
  Dataset ds = random_dataset(9, 2, 3);
  KernelSpec spec;
  spec.family = KernelFamily::gaussian;
  GramBundle gb = gram(ds, spec);
  Rng rng(5);
  Eigen::VectorXd w(ds.n0());
  for (int i = 0; i < w.size(); ++i) w[i] = rng.uniform(0.0, 1.0);
  w /= w.sum();

  // signed embedding: +1/n1 on treated, -w on controls
  Eigen::VectorXd v = Eigen::VectorXd::Zero(ds.n());
  for (int i : ds.treated) v[i] = 1.0 / ds.n1();
  for (int k = 0; k < ds.n0(); ++k) v[ds.controls[k]] = -w[k];
  double expect = std::sqrt(v.dot(gb.K * v));
  CHECK(imbalance_rkhs(w, gb) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("conditional rkhs imbalance is infinite off the null space") {
  Dataset ds = random_dataset(12, 2, 8);
  KernelSpec spec;
  spec.family = KernelFamily::beppo_levi;
  spec.bl_order = 2;
  GramBundle gb = gram(ds, spec);
  Eigen::VectorXd w = Eigen::VectorXd::Constant(ds.n0(), 1.0 / ds.n0());
  // uniform weights rarely balance the means exactly, so the value is +inf
  CHECK(imbalance_rkhs(w, gb) == kInf);
}

TEST_CASE("lipschitz imbalance: single treated unit has a closed form") {
  // with one treated unit the transport ships w_j mass along d(1, j)
  Eigen::MatrixXd D(1, 3);
  D << 2.0, 5.0, 1.0;
  Weights w = simplex_weights((Eigen::VectorXd(3) << 0.5, 0.25, 0.25).finished());
  double expect = 0.5 * 2.0 + 0.25 * 5.0 + 0.25 * 1.0;
  CHECK(imbalance_lipschitz(w, D) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("lipschitz imbalance: two-by-two transport matches enumeration") {
  Eigen::MatrixXd D(2, 2);
  D << 1.0, 4.0, 3.0, 2.0;
  Weights w = simplex_weights((Eigen::VectorXd(2) << 0.7, 0.3).finished());
  // flow f11 = t in [max(0, 0.5-0.3), min(0.5, 0.7)] = [0.2, 0.5]; cost linear in t
  auto cost = [&](double t) {
    return t * 1.0 + (0.5 - t) * 4.0 + (0.7 - t) * 3.0 + (t - 0.2) * 2.0;
  };
  double expect = std::min(cost(0.2), cost(0.5));
  CHECK(imbalance_lipschitz(w, D) == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("lipschitz imbalance vanishes when the weights sit on the treated points") {
  Eigen::MatrixXd D(2, 2);
  D << 0.0, 7.0, 7.0, 0.0;  // control j sits exactly on treated j
  Weights w = simplex_weights((Eigen::VectorXd(2) << 0.5, 0.5).finished());
  CHECK(imbalance_lipschitz(w, D) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("caliper imbalance is the bottleneck distance") {
  // single treated: largest distance among controls carrying mass
  Eigen::MatrixXd D(1, 3);
  D << 2.0, 5.0, 1.0;
  Weights w = simplex_weights((Eigen::VectorXd(3) << 0.5, 0.0, 0.5).finished());
  CHECK(imbalance_caliper(w, D) == doctest::Approx(2.0).epsilon(1e-12));
  Weights w2 = simplex_weights((Eigen::VectorXd(3) << 0.25, 0.5, 0.25).finished());
  CHECK(imbalance_caliper(w2, D) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("caliper imbalance: two treated rows pick the min-max matching") {
  Eigen::MatrixXd D(2, 2);
  D << 1.0, 10.0, 10.0, 1.0;
  Weights w = simplex_weights((Eigen::VectorXd(2) << 0.5, 0.5).finished());
  // diagonal flow is feasible, so the bottleneck stays at 1
  CHECK(imbalance_caliper(w, D) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("coarsened imbalance aggregates stratum gaps under the conjugate norm") {
  // 6 units, strata given via one column with explicit cuts
  Dataset ds;
  ds.X.resize(6, 1);
  ds.X << 0.0, 1.0, 2.0, 3.0, 4.0, 5.0;
  ds.T.resize(6);
  ds.T << 1, 1, 0, 0, 0, 0;
  ds.Y.resize(6);
  ds.Y.setZero();
  ds.reindex();
  CoarseningSpec spec;
  spec.cuts = {{2.5}};  // strata {0,1,2} and {3,4,5}
  CoarsenResult c = coarsen(ds, spec);
  REQUIRE(c.J == 2);

  // treated mass: both treated in the low stratum
  Weights w = simplex_weights((Eigen::VectorXd(4) << 0.25, 0.25, 0.25, 0.25).finished());
  // low stratum holds control 0 (x=2), rest in high
  // gaps: low 1.0 - 0.25 = 0.75, high 0.0 - 0.75 = -0.75
  CHECK(imbalance_coarsened(w, ds, c, kInf) == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(imbalance_coarsened(w, ds, c, 1.0) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(imbalance_coarsened(w, ds, c, 2.0) ==
        doctest::Approx(std::sqrt(2.0 * 0.75 * 0.75)).epsilon(1e-12));
}

TEST_CASE("linear imbalance closed forms") {
  Eigen::RowVectorXd mean1(2);
  mean1 << 1.0, -1.0;
  Eigen::MatrixXd X0(3, 2);
  X0 << 0.0, 0.0, 2.0, -2.0, 1.0, 1.0;
  Weights w = simplex_weights((Eigen::VectorXd(3) << 0.5, 0.25, 0.25).finished());
  Eigen::VectorXd gap = (mean1 - w.w.transpose() * X0).transpose();

  CHECK(imbalance_linear_l2(w, mean1, X0, {}) == doctest::Approx(gap.norm()).epsilon(1e-12));

  Eigen::MatrixXd V(2, 2);
  V << 2.0, 0.5, 0.5, 1.0;
  CHECK(imbalance_linear_l2(w, mean1, X0, V) ==
        doctest::Approx(std::sqrt(gap.dot(V * gap))).epsilon(1e-12));

  CHECK(imbalance_linear_lp(w, mean1, X0, 1.0) ==
        doctest::Approx(gap.lpNorm<Eigen::Infinity>()).epsilon(1e-12));
  CHECK(imbalance_linear_lp(w, mean1, X0, kInf) ==
        doctest::Approx(gap.lpNorm<1>()).epsilon(1e-12));
  CHECK(imbalance_linear_lp(w, mean1, X0, 2.0) == doctest::Approx(gap.norm()).epsilon(1e-12));
}

TEST_CASE("general weights add the mass-deficit coordinate") {
  Eigen::RowVectorXd mean1(1);
  mean1 << 2.0;
  Eigen::MatrixXd X0(2, 1);
  X0 << 1.0, 3.0;
  Weights w;
  w.w = (Eigen::VectorXd(2) << 0.25, 0.25).finished();  // sums to 0.5
  w.space = WeightSpace::general;
  double g = 2.0 - (0.25 * 1.0 + 0.25 * 3.0);
  double a = 1.0 - 0.5;
  CHECK(imbalance_linear_l2(w, mean1, X0, {}) ==
        doctest::Approx(std::sqrt(a * a + g * g)).epsilon(1e-12));
  CHECK(imbalance_linear_lp(w, mean1, X0, kInf) ==
        doctest::Approx(std::abs(a) + std::abs(g)).epsilon(1e-12));
}

TEST_CASE("variance terms") {
  Weights w = simplex_weights((Eigen::VectorXd(2) << 0.75, 0.25).finished());
  CHECK(variance_term(w, 2.0, 4) ==
        doctest::Approx(2.0 * (0.75 * 0.75 + 0.25 * 0.25 + 0.25)).epsilon(1e-12));

  Eigen::VectorXd s0(2), s1(3);
  s0 << 1.0, 4.0;
  s1 << 2.0, 2.0, 5.0;
  double expect = 0.75 * 0.75 * 1.0 + 0.25 * 0.25 * 4.0 + (2.0 + 2.0 + 5.0) / 9.0;
  CHECK(variance_term(w, s0, s1) == doctest::Approx(expect).epsilon(1e-12));
  CHECK_THROWS_AS(variance_term(w, -1.0, 4), Error);
}

TEST_CASE("compile_metric dispatch agrees with the direct evaluators") {
  Dataset ds = random_dataset(12, 2, 17);
  Rng rng(19);
  Eigen::VectorXd raw(ds.n0());
  for (int i = 0; i < raw.size(); ++i) raw[i] = rng.uniform(0.0, 1.0);
  raw /= raw.sum();
  Weights w = simplex_weights(raw);

  KernelSpec kspec;
  BalanceMetric rk = BalanceMetric::make_rkhs(kspec);
  BalanceContext ctx = compile_metric(ds, rk);
  CHECK(imbalance(ctx, w) ==
        doctest::Approx(imbalance_rkhs(w.w, *ctx.gb)).epsilon(1e-12));

  BalanceMetric lip = BalanceMetric::make_lipschitz();
  BalanceContext lctx = compile_metric(ds, lip);
  CHECK(imbalance(lctx, w) ==
        doctest::Approx(imbalance_lipschitz(w, lctx.D)).epsilon(1e-12));

  CoarseningSpec cs;
  cs.levels = 2;
  BalanceMetric co = BalanceMetric::make_coarsened(cs, kInf);
  BalanceContext cctx = compile_metric(ds, co);
  CHECK(imbalance(cctx, w) ==
        doctest::Approx(imbalance_coarsened(w, ds, cctx.coarsen, kInf)).epsilon(1e-12));

  BalanceMetric lin = BalanceMetric::make_linear_lp(2.0);
  BalanceContext linctx = compile_metric(ds, lin);
  Eigen::RowVectorXd mean1 = ds.x_treated().colwise().mean();
  CHECK(imbalance(linctx, w) ==
        doctest::Approx(imbalance_linear_lp(w, mean1, ds.x_controls(), 2.0)).epsilon(1e-12));
}

TEST_CASE("mixed metric adds the components with the exchange rate") {
  Dataset ds = random_dataset(10, 2, 23);
  Rng rng(29);
  Eigen::VectorXd raw(ds.n0());
  for (int i = 0; i < raw.size(); ++i) raw[i] = rng.uniform(0.0, 1.0);
  raw /= raw.sum();
  Weights w = simplex_weights(raw);

  BalanceMetric a = BalanceMetric::make_lipschitz();
  BalanceMetric b = BalanceMetric::make_linear_lp(2.0);
  BalanceMetric mixed = BalanceMetric::make_mixed(a, b, 0.7);
  BalanceContext mctx = compile_metric(ds, mixed);
  double va = imbalance(compile_metric(ds, a), w);
  double vb = imbalance(compile_metric(ds, b), w);
  CHECK(imbalance(mctx, w) == doctest::Approx(va + 0.7 * vb).epsilon(1e-12));
}

TEST_CASE("mahalanobis distances are slice independent") {
  Dataset ds = random_dataset(14, 2, 31);
  MetricSpec spec;
  spec.kind = DistanceKind::mahalanobis_sqrt;
  Eigen::MatrixXd D_full = distance_matrix(ds, spec);
  CHECK(D_full.rows() == ds.n1());
  CHECK(D_full.cols() == ds.n0());
  // the slice view must agree with the treated-by-controls matrix
  Eigen::MatrixXd D_idx = distance_matrix(ds, spec, ds.treated, ds.controls);
  CHECK((D_full - D_idx).lpNorm<Eigen::Infinity>() <= 1e-14);
  // distances are symmetric and zero on the diagonal of the self view
  std::vector<int> all(ds.n());
  for (int i = 0; i < ds.n(); ++i) all[i] = i;
  Eigen::MatrixXd D_all = distance_matrix(ds, spec, all, all);
  CHECK((D_all - D_all.transpose()).lpNorm<Eigen::Infinity>() <= 1e-12);
  CHECK(D_all.diagonal().lpNorm<Eigen::Infinity>() <= 1e-14);
}

TEST_CASE("precomputed distances are validated and used verbatim") {
  Dataset ds = random_dataset(6, 2, 37);
  MetricSpec spec;
  spec.kind = DistanceKind::precomputed;
  spec.precomputed = Eigen::MatrixXd::Zero(6, 6);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) spec.precomputed(i, j) = std::abs(i - j);
  Eigen::MatrixXd D = distance_matrix(ds, spec);
  for (int a = 0; a < ds.n1(); ++a)
    for (int b = 0; b < ds.n0(); ++b)
      CHECK(D(a, b) == std::abs(ds.treated[a] - ds.controls[b]));

  MetricSpec bad;
  bad.kind = DistanceKind::precomputed;
  bad.precomputed = Eigen::MatrixXd::Zero(3, 3);  // wrong size
  CHECK_THROWS_AS(distance_matrix(ds, bad), Error);
}
