#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "core/balance.hpp"
#include "core/dataset.hpp"
#include "core/error.hpp"
#include "core/kernels.hpp"
#include "core/methods.hpp"
#include "core/rng.hpp"
#include "core/runner.hpp"
#include "core/subset.hpp"
#include "core/tune.hpp"

using namespace gom;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

Dataset random_dataset(int n, int d, uint64_t seed, int n1 = -1) {
  Rng rng(seed);
  Dataset ds;
  ds.X.resize(n, d);
  ds.T.resize(n);
  ds.Y.resize(n);
  if (n1 < 0) n1 = n / 3;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) ds.X(i, j) = rng.uniform(-1.0, 1.0);
    ds.T[i] = i < n1 ? 1 : 0;
    ds.Y[i] = rng.normal();
  }
  ds.reindex();
  return ds;
}

Eigen::MatrixXd euclidean_D(const Dataset& ds) {
  Eigen::MatrixXd D(ds.n1(), ds.n0());
  for (int a = 0; a < ds.n1(); ++a)
    for (int b = 0; b < ds.n0(); ++b)
      D(a, b) = (ds.X.row(ds.treated[a]) - ds.X.row(ds.controls[b])).norm();
  return D;
}

MetricSpec euclid() {
  MetricSpec m;
  m.kind = DistanceKind::euclidean;
  return m;
}

// all ordered selections of n1 distinct controls, calling visit(assignment)
void for_each_assignment(int n1, int n0, const std::function<void(const std::vector<int>&)>& visit) {
  std::vector<int> pick(n1, -1);
  std::vector<bool> used(n0, false);
  std::function<void(int)> rec = [&](int a) {
    if (a == n1) {
      visit(pick);
      return;
    }
    for (int j = 0; j < n0; ++j) {
      if (used[j]) continue;
      used[j] = true;
      pick[a] = j;
      rec(a + 1);
      used[j] = false;
    }
  };
  rec(0);
}

}  // namespace

TEST_CASE("nnm equals the per-treated nearest control") {
  Dataset ds = random_dataset(20, 2, 41);
  GomSolution sol = nnm(ds, euclid());
  Eigen::MatrixXd D = euclidean_D(ds);
  Eigen::VectorXd expect = Eigen::VectorXd::Zero(ds.n0());
  for (int a = 0; a < ds.n1(); ++a) {
    int best = 0;
    for (int j = 1; j < ds.n0(); ++j)
      if (D(a, j) < D(a, best)) best = j;
    expect[best] += 1.0 / ds.n1();
  }
  CHECK((sol.weights.w - expect).lpNorm<Eigen::Infinity>() <= 1e-15);
  CHECK(sol.weights.space == WeightSpace::simplex);
  // achieved transport cost equals the mean nearest distance (free optimum)
  double mean_min = 0.0;
  for (int a = 0; a < ds.n1(); ++a) mean_min += D.row(a).minCoeff();
  mean_min /= ds.n1();
  CHECK(sol.imbalance == doctest::Approx(mean_min).epsilon(1e-10));
}

TEST_CASE("one_to_one matches the brute-force optimal assignment") {
  Dataset ds = random_dataset(10, 2, 43, 4);  // n1 = 4, n0 = 6
  GomSolution sol = one_to_one(ds, euclid());
  Eigen::MatrixXd D = euclidean_D(ds);

  double best = kInf;
  std::vector<int> best_pick;
  for_each_assignment(4, 6, [&](const std::vector<int>& pick) {
    double tot = 0.0;
    for (int a = 0; a < 4; ++a) tot += D(a, pick[a]);
    if (tot < best) {
      best = tot;
      best_pick = pick;
    }
  });
  Eigen::VectorXd expect = Eigen::VectorXd::Zero(6);
  for (int j : best_pick) expect[j] += 0.25;
  CHECK((sol.weights.w - expect).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("one_to_one requires enough controls") {
  Dataset ds = random_dataset(10, 2, 44, 7);  // n1 = 7 > n0 = 3
  try {
    one_to_one(ds, euclid());
    FAIL("expected an infeasibility error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::infeasible);
  }
}

TEST_CASE("ocm without replacement solves the min-max assignment") {
  Dataset ds = random_dataset(9, 2, 47, 3);  // n1 = 3, n0 = 6
  GomSolution sol = ocm(ds, euclid(), false);
  Eigen::MatrixXd D = euclidean_D(ds);
  double best = kInf;
  for_each_assignment(3, 6, [&](const std::vector<int>& pick) {
    double mx = 0.0;
    for (int a = 0; a < 3; ++a) mx = std::max(mx, D(a, pick[a]));
    best = std::min(best, mx);
  });
  CHECK(sol.imbalance == doctest::Approx(best).epsilon(1e-10));
  CHECK(sol.weights.w.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ocm with replacement attains the max of nearest distances") {
  Dataset ds = random_dataset(12, 2, 49, 4);
  GomSolution sol = ocm(ds, euclid(), true);
  Eigen::MatrixXd D = euclidean_D(ds);
  double expect = 0.0;
  for (int a = 0; a < ds.n1(); ++a) expect = std::max(expect, D.row(a).minCoeff());
  CHECK(sol.imbalance == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("cem weights are stratum proportional") {
  Dataset ds;
  ds.X.resize(7, 1);
  ds.X << 0.0, 0.1, 0.2, 1.0, 1.1, 1.2, 1.3;
  ds.T.resize(7);
  ds.T << 1, 1, 0, 1, 0, 0, 0;
  ds.Y.resize(7);
  ds.Y.setZero();
  ds.reindex();
  CoarseningSpec spec;
  spec.cuts = {{0.5}};
  GomSolution sol = cem(ds, spec);
  // low stratum: 2/3 treated mass over 1 control; high: 1/3 over 3 controls
  Eigen::VectorXd expect(4);
  expect << 2.0 / 3.0, 1.0 / 9.0, 1.0 / 9.0, 1.0 / 9.0;
  CHECK((sol.weights.w - expect).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("cem keeps the deficit when a treated stratum lacks controls") {
  Dataset ds;
  ds.X.resize(5, 1);
  ds.X << 0.0, 0.1, 1.0, 1.1, 1.2;
  ds.T.resize(5);
  ds.T << 1, 1, 1, 0, 0;  // the low stratum has no controls
  ds.Y.resize(5);
  ds.Y.setZero();
  ds.reindex();
  CoarseningSpec spec;
  spec.cuts = {{0.5}};
  GomSolution sol = cem(ds, spec, false);
  CHECK(sol.weights.w.sum() == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(!sol.note.empty());
  GomSolution pruned = cem(ds, spec, true);
  CHECK(pruned.weights.w.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(!pruned.note.empty());
}

TEST_CASE("bvecem matches a grid-search oracle on two strata") {
  Dataset ds;
  ds.X.resize(10, 1);
  ds.X << 0.0, 0.1, 0.2, 0.3, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5;
  ds.T.resize(10);
  ds.T << 1, 1, 1, 0, 1, 0, 0, 0, 0, 0;
  ds.Y.resize(10);
  ds.Y.setZero();
  ds.reindex();  // low: 3 treated / 1 control; high: 1 treated / 5 controls
  CoarseningSpec spec;
  spec.cuts = {{0.65}};
  CoarsenResult cr = coarsen(ds, spec);
  REQUIRE(cr.J == 2);

  for (double lambda : {0.05, 0.5, 5.0}) {
    GomSolution sol = bvecem(ds, spec, lambda);
    // oracle: stratum masses (t, 1 - t); within-stratum weights are uniform
    const double s_low = 3.0 / 4.0, s_high = 1.0 / 4.0;
    auto objective = [&](double t) {
      double imb = std::abs(s_low - t) + std::abs(s_high - (1.0 - t));
      double norm2 = t * t / 1.0 + (1.0 - t) * (1.0 - t) / 5.0;
      return imb * imb + lambda * norm2;
    };
    double best = kInf;
    for (int k = 0; k <= 200000; ++k) best = std::min(best, objective(k / 200000.0));
    CHECK(sol.objective == doctest::Approx(best).epsilon(1e-6));
    CHECK(sol.weights.w.sum() == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(sol.weights.w.minCoeff() >= -1e-12);
  }
}

TEST_CASE("omm equals exhaustive subset enumeration") {
  Dataset ds = random_dataset(13, 2, 53, 3);  // n0 = 10
  const int n0 = ds.n0();
  Eigen::RowVectorXd mean1 = ds.x_treated().colwise().mean();
  Eigen::MatrixXd X0 = ds.x_controls();

  for (double lambda : {0.0, 0.2, 2.0}) {
    GomSolution sol = omm(ds, Eigen::MatrixXd(), lambda);
    double best = kInf;
    for (int mask = 1; mask < (1 << n0); ++mask) {
      Eigen::RowVectorXd m = Eigen::RowVectorXd::Zero(2);
      int size = 0;
      for (int j = 0; j < n0; ++j)
        if (mask & (1 << j)) {
          m += X0.row(j);
          ++size;
        }
      m /= size;
      double obj = (mean1 - m).squaredNorm() + lambda / size;
      best = std::min(best, obj);
    }
    CHECK(sol.objective == doctest::Approx(best).epsilon(1e-10));
    CHECK(sol.weights.space == WeightSpace::subset);
  }
}

TEST_CASE("omm with fixed cardinality restricts the scan") {
  Dataset ds = random_dataset(13, 2, 59, 3);
  const int n0 = ds.n0();
  SubsetMethodOptions opts;
  opts.cardinality = 4;
  GomSolution sol = omm(ds, Eigen::MatrixXd(), 0.1, opts);
  CHECK(sol.weights.subset_size == 4);
  int support = 0;
  for (int j = 0; j < n0; ++j)
    if (sol.weights.w[j] > 0) ++support;
  CHECK(support == 4);

  Eigen::RowVectorXd mean1 = ds.x_treated().colwise().mean();
  Eigen::MatrixXd X0 = ds.x_controls();
  double best = kInf;
  for (int mask = 1; mask < (1 << n0); ++mask) {
    if (__builtin_popcount(static_cast<unsigned>(mask)) != 4) continue;
    Eigen::RowVectorXd m = Eigen::RowVectorXd::Zero(2);
    for (int j = 0; j < n0; ++j)
      if (mask & (1 << j)) m += X0.row(j);
    m /= 4.0;
    best = std::min(best, (mean1 - m).squaredNorm() + 0.1 / 4.0);
  }
  CHECK(sol.objective == doctest::Approx(best).epsilon(1e-10));
}

TEST_CASE("omm_lp at p = inf scores the gap by its l1 norm") {
  Dataset ds = random_dataset(12, 2, 61, 3);
  const int n0 = ds.n0();
  Eigen::RowVectorXd mean1 = ds.x_treated().colwise().mean();
  Eigen::MatrixXd X0 = ds.x_controls();
  const double lambda = 0.3;
  GomSolution sol = omm_lp(ds, kInf, lambda);
  double best = kInf;
  for (int mask = 1; mask < (1 << n0); ++mask) {
    Eigen::RowVectorXd m = Eigen::RowVectorXd::Zero(2);
    int size = 0;
    for (int j = 0; j < n0; ++j)
      if (mask & (1 << j)) {
        m += X0.row(j);
        ++size;
      }
    m /= size;
    double imb = (mean1 - m).cwiseAbs().sum();
    best = std::min(best, imb * imb + lambda / size);
  }
  CHECK(sol.objective == doctest::Approx(best).epsilon(1e-10));
}

TEST_CASE("subset_search_quadratic agrees with enumeration on a PSD objective") {
  const int n0 = 12;
  Rng rng(67);
  Eigen::MatrixXd A(n0, n0);
  for (int i = 0; i < n0; ++i)
    for (int j = 0; j < n0; ++j) A(i, j) = rng.normal();
  Eigen::MatrixXd Q = A.transpose() * A / n0;
  Eigen::VectorXd b(n0);
  for (int i = 0; i < n0; ++i) b[i] = rng.normal();
  const double c0 = 0.4;

  SubsetResult res = subset_search_quadratic(Q, b, c0);
  CHECK(res.exact);

  double best = kInf;
  for (int mask = 1; mask < (1 << n0); ++mask) {
    std::vector<int> s;
    for (int j = 0; j < n0; ++j)
      if (mask & (1 << j)) s.push_back(j);
    double v = c0;
    for (int i : s) v += b[i] / s.size();
    for (int i : s)
      for (int j : s) v += Q(i, j) / (static_cast<double>(s.size()) * s.size());
    best = std::min(best, v);
  }
  CHECK(res.objective == doctest::Approx(best).epsilon(1e-10));
}

TEST_CASE("gnfb improves on the full-control near-fine balance") {
  Dataset ds = random_dataset(18, 2, 71);
  GomSolution sol = gnfb(ds, kInf);
  Weights uniform;
  uniform.w = Eigen::VectorXd::Constant(ds.n0(), 1.0 / ds.n0());
  uniform.space = WeightSpace::simplex;
  BalanceContext ctx = compile_metric(ds, BalanceMetric::make_linear_lp(kInf));
  CHECK(sol.imbalance <= imbalance(ctx, uniform) + 1e-12);
  CHECK(sol.weights.w.sum() == doctest::Approx(1.0).epsilon(1e-10));
  // deterministic
  GomSolution again = gnfb(ds, kInf);
  CHECK(sol.weights.w == again.weights.w);
}

TEST_CASE("kom on the simplex satisfies the KKT conditions") {
  Dataset ds = random_dataset(30, 2, 73);
  KernelSpec spec;
  spec.family = KernelFamily::gaussian;
  GramBundle gb = gram(ds, spec);
  Eigen::MatrixXd K00 = gb.K00(), K10 = gb.K10();
  Eigen::VectorXd kbar = K10.colwise().mean();

  for (double lambda : {0.01, 0.1, 1.0}) {
    GomSolution sol = kom(ds, spec, WeightSpace::simplex, lambda);
    const Eigen::VectorXd& w = sol.weights.w;
    Eigen::VectorXd g = 2.0 * (K00 * w) + 2.0 * lambda * w - 2.0 * kbar;
    // active coordinates share the multiplier; inactive ones sit above it
    double mu = 0.0;
    int active = 0;
    for (int i = 0; i < w.size(); ++i)
      if (w[i] > 1e-7) {
        mu += g[i];
        ++active;
      }
    REQUIRE(active > 0);
    mu /= active;
    for (int i = 0; i < w.size(); ++i) {
      if (w[i] > 1e-7) CHECK(std::abs(g[i] - mu) <= 1e-6);
      else CHECK(g[i] >= mu - 1e-6);
    }
  }
}

TEST_CASE("kom general space has the ridge closed form") {
  Dataset ds = random_dataset(24, 2, 79);
  KernelSpec spec;
  spec.family = KernelFamily::gaussian;
  GramBundle gb = gram(ds, spec);
  Eigen::MatrixXd K00 = gb.K00();
  Eigen::VectorXd kbar = gb.K10().colwise().mean();
  const double lambda = 0.5;
  GomSolution sol = kom(ds, spec, WeightSpace::general, lambda);
  Eigen::MatrixXd A = K00;
  A.diagonal().array() += lambda;
  Eigen::VectorXd expect = A.ldlt().solve(kbar);
  CHECK((sol.weights.w - expect).lpNorm<Eigen::Infinity>() <= 1e-8);
}

TEST_CASE("kom at lambda = inf returns the minimum-norm element") {
  Dataset ds = random_dataset(20, 2, 83);
  KernelSpec spec;
  GomSolution simplex = kom(ds, spec, WeightSpace::simplex, kInf);
  CHECK((simplex.weights.w - Eigen::VectorXd::Constant(ds.n0(), 1.0 / ds.n0()))
            .lpNorm<Eigen::Infinity>() <= 1e-12);
  GomSolution general = kom(ds, spec, WeightSpace::general, kInf);
  CHECK(general.weights.w.lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("kom b_simplex respects the cap") {
  Dataset ds = random_dataset(20, 2, 89);
  KernelSpec spec;
  const double b = 2.0 / ds.n0();
  GomSolution sol = kom(ds, spec, WeightSpace::b_simplex, 0.05, {}, b);
  CHECK(sol.weights.w.maxCoeff() <= b + 1e-10);
  CHECK(sol.weights.w.sum() == doctest::Approx(1.0).epsilon(1e-10));
  // infeasible cap
  try {
    kom(ds, spec, WeightSpace::b_simplex, 0.05, {}, 1.0 / (2.0 * ds.n0()));
    FAIL("expected infeasible");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::infeasible);
  }
}

TEST_CASE("kom subset space equals enumeration of uniform subsets") {
  Dataset ds = random_dataset(12, 2, 97, 3);  // n0 = 9
  KernelSpec spec;
  spec.family = KernelFamily::gaussian;
  GramBundle gb = gram(ds, spec);
  Eigen::MatrixXd K00 = gb.K00(), K10 = gb.K10(), K11 = gb.K11();
  Eigen::VectorXd kbar = K10.colwise().mean();
  const double c0 = K11.sum() / (ds.n1() * ds.n1());
  const double lambda = 0.3;
  GomSolution sol = kom(ds, spec, WeightSpace::subset, lambda);
  double best = kInf;
  for (int mask = 1; mask < (1 << 9); ++mask) {
    std::vector<int> s;
    for (int j = 0; j < 9; ++j)
      if (mask & (1 << j)) s.push_back(j);
    const double m = static_cast<double>(s.size());
    double quad = 0.0, lin = 0.0;
    for (int i : s) {
      lin += kbar[i];
      for (int j : s) quad += K00(i, j);
    }
    double obj = c0 - 2.0 * lin / m + quad / (m * m) + lambda / m;
    best = std::min(best, obj);
  }
  CHECK(sol.objective == doctest::Approx(best).epsilon(1e-9));
}

TEST_CASE("skom balances every null-space feature exactly") {
  Dataset ds = random_dataset(26, 2, 101);
  KernelSpec spec;
  spec.family = KernelFamily::beppo_levi;
  spec.bl_order = 2;
  GomSolution sol = skom(ds, spec, WeightSpace::simplex, 0.5);
  GramBundle gb = gram(ds, spec);
  Eigen::VectorXd g1 = Eigen::VectorXd::Zero(gb.G.rows());
  for (int i : ds.treated) g1 += gb.G.col(i);
  g1 /= ds.n1();
  Eigen::VectorXd g0 = Eigen::VectorXd::Zero(gb.G.rows());
  for (int k = 0; k < ds.n0(); ++k) g0 += sol.weights.w[k] * gb.G.col(ds.controls[k]);
  CHECK((g0 - g1).lpNorm<Eigen::Infinity>() <= 1e-7);
  CHECK(std::isfinite(sol.imbalance));
}

TEST_CASE("regression_as_gom reproduces the interacted least-squares estimate") {
  Dataset ds = random_dataset(40, 3, 103);
  GomSolution sol = regression_as_gom(ds, 0.0);
  CHECK(sol.weights.space == WeightSpace::general);

  // oracle: OLS of Y0 on (1, X0), predict at the treated mean
  Eigen::MatrixXd F(ds.n0(), 4);
  F.col(0).setOnes();
  F.rightCols(3) = ds.x_controls();
  Eigen::VectorXd beta = (F.transpose() * F).ldlt().solve(F.transpose() * ds.y_controls());
  Eigen::RowVectorXd mean1 = ds.x_treated().colwise().mean();
  double predicted = beta[0] + mean1.dot(beta.tail(3));
  double weighted = sol.weights.w.dot(ds.y_controls());
  CHECK(weighted == doctest::Approx(predicted).epsilon(1e-8));
}

TEST_CASE("mixed_method with one treated unit equals direct enumeration") {
  Dataset ds = random_dataset(9, 2, 107, 1);  // n1 = 1, n0 = 8
  BalanceMetric metric = BalanceMetric::make_mixed(
      BalanceMetric::make_lipschitz(euclid()), BalanceMetric::make_linear_lp(2.0), 0.5);
  const double lambda = 0.4;
  GomSolution sol = mixed_method(ds, metric, lambda);

  Eigen::MatrixXd D = euclidean_D(ds);
  Eigen::RowVectorXd x1 = ds.X.row(ds.treated[0]);
  Eigen::MatrixXd X0 = ds.x_controls();
  double best = kInf;
  for (int mask = 1; mask < (1 << 8); ++mask) {
    std::vector<int> s;
    for (int j = 0; j < 8; ++j)
      if (mask & (1 << j)) s.push_back(j);
    const double m = static_cast<double>(s.size());
    double pair = 0.0;
    Eigen::RowVectorXd mean0 = Eigen::RowVectorXd::Zero(2);
    for (int j : s) {
      pair += D(0, j) / m;
      mean0 += X0.row(j) / m;
    }
    double imb = pair + 0.5 * (x1 - mean0).norm();
    best = std::min(best, imb * imb + lambda / m);
  }
  CHECK(sol.objective == doctest::Approx(best).epsilon(1e-9));
}

TEST_CASE("solve_gom dispatches to the specialized solvers") {
  Dataset ds = random_dataset(21, 2, 109);
  KernelSpec kspec;

  GomSpec spec;
  spec.metric = BalanceMetric::make_rkhs(kspec);
  spec.lambda = 0.7;
  GomSolution via_gom = solve_gom(ds, spec);
  GomSolution direct = kom(ds, kspec, WeightSpace::simplex, 0.7);
  CHECK(via_gom.weights.w == direct.weights.w);

  GomSpec lip;
  lip.metric = BalanceMetric::make_lipschitz(euclid());
  lip.lambda = 0.5;
  GomSolution via_lip = solve_gom(ds, lip);
  GomSolution direct_lip = bvennm(ds, euclid(), 0.5);
  CHECK(via_lip.weights.w == direct_lip.weights.w);

  CoarseningSpec cs;
  cs.levels = 2;
  GomSpec co;
  co.metric = BalanceMetric::make_coarsened(cs, kInf);
  co.lambda = 0.5;
  GomSolution via_co = solve_gom(ds, co);
  GomSolution direct_co = bvecem(ds, cs, 0.5);
  CHECK(via_co.weights.w == direct_co.weights.w);
}

TEST_CASE("bvennm interpolates between free matching and uniformity") {
  Dataset ds = random_dataset(24, 2, 113);
  MetricSpec m = euclid();
  GomSolution tight = bvennm(ds, m, 1e-6);
  GomSolution loose = bvennm(ds, m, 1e6);
  Eigen::VectorXd uniform = Eigen::VectorXd::Constant(ds.n0(), 1.0 / ds.n0());
  CHECK((loose.weights.w - uniform).lpNorm<Eigen::Infinity>() <= 1e-3);
  // the tight solution approaches the unconstrained transport optimum
  GomSolution free = nnm(ds, m);
  CHECK(tight.imbalance <= free.imbalance + 1e-3);

  // intermediate lambda: solution beats both endpoints on its own objective
  const double lambda = 0.2;
  GomSolution mid = bvennm(ds, m, lambda);
  BalanceContext ctx = compile_metric(ds, BalanceMetric::make_lipschitz(m));
  auto objective = [&](const Weights& w) {
    double imb = imbalance(ctx, w);
    return imb * imb + lambda * w.w.squaredNorm();
  };
  CHECK(objective(mid.weights) <= objective(tight.weights) + 1e-8);
  CHECK(objective(mid.weights) <= objective(loose.weights) + 1e-8);
}

TEST_CASE("nnm_pp tunes and returns valid simplex weights deterministically") {
  Dataset ds = random_dataset(30, 2, 127);
  NnmPpOptions opts;
  opts.folds = 3;
  opts.seed = 5;
  GomSolution a = nnm_pp(ds, euclid(), opts);
  GomSolution b = nnm_pp(ds, euclid(), opts);
  CHECK(a.weights.w == b.weights.w);
  CHECK(a.weights.w.sum() == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(a.weights.w.minCoeff() >= -1e-12);
  CHECK(a.diag.count("psi_hat") == 1);
}

TEST_CASE("cem_pp and onfb_pp produce valid weights") {
  Dataset ds = random_dataset(40, 2, 131);
  CoarseningSpec cs;
  cs.levels = 4;
  GomSolution a = cem_pp(ds, cs);
  CHECK(a.weights.w.minCoeff() >= -1e-12);
  GomSolution b = onfb_pp(ds, kInf);
  CHECK(b.weights.w.sum() == doctest::Approx(1.0).epsilon(1e-10));
}

namespace {

// checks exact weight equivariance for one method under one permutation
void check_equivariant(const Dataset& ds, const std::vector<int>& perm,
                       const std::function<Eigen::VectorXd(const Dataset&)>& method,
                       const char* label) {
  INFO(label);
  const int n = ds.n();
  // permuted dataset: original row i lands at position perm[i]
  Dataset pd;
  pd.X.resize(n, ds.d());
  pd.T.resize(n);
  pd.Y.resize(n);
  for (int i = 0; i < n; ++i) {
    pd.X.row(perm[i]) = ds.X.row(i);
    pd.T[perm[i]] = ds.T[i];
    pd.Y[perm[i]] = ds.Y[i];
  }
  pd.col_names = ds.col_names;
  pd.reindex();

  Eigen::VectorXd w1 = method(ds);
  Eigen::VectorXd w2 = method(pd);
  REQUIRE(w1.size() == ds.n0());
  REQUIRE(w2.size() == ds.n0());

  // map original control slot -> permuted control slot
  std::vector<int> pos_in_pd(n, -1);
  for (size_t k = 0; k < pd.controls.size(); ++k) pos_in_pd[pd.controls[k]] = static_cast<int>(k);
  for (int k = 0; k < ds.n0(); ++k) {
    int slot = pos_in_pd[perm[ds.controls[k]]];
    REQUIRE(slot >= 0);
    CHECK(w1[k] == w2[slot]);  // exact, bit for bit
  }
}

}  // namespace

TEST_CASE("every solver is exactly permutation equivariant, duplicates included") {
  // build a dataset with duplicated rows to stress the tie handling
  Dataset base = random_dataset(18, 2, 137, 6);
  Dataset ds;
  const int n = 24;
  ds.X.resize(n, 2);
  ds.T.resize(n);
  ds.Y.resize(n);
  ds.X.topRows(18) = base.X;
  ds.T.head(18) = base.T;
  ds.Y.head(18) = base.Y;
  for (int i = 0; i < 6; ++i) {  // exact copies of rows 2, 5, 8, 11, 14, 17
    ds.X.row(18 + i) = base.X.row(2 + 3 * i);
    ds.T[18 + i] = base.T[2 + 3 * i];
    ds.Y[18 + i] = base.Y[2 + 3 * i];
  }
  ds.reindex();
  REQUIRE(ds.n1() > 1);
  REQUIRE(ds.n0() > 8);

  Rng rng(1234);
  std::vector<int> perm = rng.permutation(n);

  KernelSpec gaussian;
  KernelSpec bl;
  bl.family = KernelFamily::beppo_levi;
  bl.bl_order = 2;
  CoarseningSpec cs;
  cs.levels = 2;

  check_equivariant(ds, perm, [&](const Dataset& d) { return nnm(d, euclid()).weights.w; },
                    "nnm");
  check_equivariant(ds, perm,
                    [&](const Dataset& d) { return one_to_one(d, euclid()).weights.w; },
                    "one_to_one");
  check_equivariant(ds, perm,
                    [&](const Dataset& d) { return bvennm(d, euclid(), 0.5).weights.w; },
                    "bvennm");
  check_equivariant(ds, perm,
                    [&](const Dataset& d) { return ocm(d, euclid(), false).weights.w; }, "ocm");
  check_equivariant(ds, perm, [&](const Dataset& d) { return cem(d, cs).weights.w; }, "cem");
  check_equivariant(ds, perm, [&](const Dataset& d) { return bvecem(d, cs, 0.5).weights.w; },
                    "bvecem");
  check_equivariant(ds, perm,
                    [&](const Dataset& d) {
                      SubsetMethodOptions so;
                      return omm(d, Eigen::MatrixXd(), 0.5, so).weights.w;
                    },
                    "omm");
  check_equivariant(ds, perm, [&](const Dataset& d) { return gnfb(d, kInf).weights.w; },
                    "gnfb");
  check_equivariant(ds, perm,
                    [&](const Dataset& d) {
                      return kom(d, gaussian, WeightSpace::simplex, 0.5).weights.w;
                    },
                    "kom simplex");
  check_equivariant(ds, perm,
                    [&](const Dataset& d) {
                      return kom(d, gaussian, WeightSpace::general, 0.5).weights.w;
                    },
                    "kom general");
  check_equivariant(ds, perm,
                    [&](const Dataset& d) {
                      return skom(d, bl, WeightSpace::simplex, 0.5).weights.w;
                    },
                    "skom");
  check_equivariant(ds, perm,
                    [&](const Dataset& d) { return regression_as_gom(d, 1.0).weights.w; },
                    "regression_as_gom");
  check_equivariant(ds, perm,
                    [&](const Dataset& d) {
                      NnmPpOptions opts;
                      opts.folds = 3;
                      opts.seed = 7;
                      return nnm_pp(d, euclid(), opts).weights.w;
                    },
                    "nnm_pp");
  check_equivariant(ds, perm,
                    [&](const Dataset& d) {
                      KomPpOptions opts;
                      opts.tune.restarts = 2;
                      opts.tune.seed = 3;
                      return kom_pp(d, gaussian, WeightSpace::simplex, opts).sol.weights.w;
                    },
                    "kom_pp");
  check_equivariant(ds, perm, [&](const Dataset& d) { return ipw_weights(d).weights.w; },
                    "ipw");
  check_equivariant(ds, perm, [&](const Dataset& d) { return psm_weights(d).weights.w; },
                    "psm");
  check_equivariant(ds, perm, [&](const Dataset& d) { return uniform_weights(d).weights.w; },
                    "uniform");
}

TEST_CASE("subset infeasibility surfaces as the right error") {
  Dataset ds = random_dataset(10, 2, 139, 4);  // n0 = 6
  KernelSpec spec;
  try {
    kom(ds, spec, WeightSpace::subset, 0.1, {}, 1.0, 9);  // subset_size > n0
    FAIL("expected infeasible");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::infeasible);
  }
}
