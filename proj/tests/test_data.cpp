#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <set>

#include "core/dataset.hpp"
#include "core/error.hpp"
#include "core/rng.hpp"

using namespace gom;

TEST_CASE("rng produces sane uniform and normal draws") {
  Rng rng(42);
  const int n = 20000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
    sum2 += u * u;
  }
  CHECK(std::abs(sum / n - 0.5) < 0.01);
  CHECK(std::abs(sum2 / n - 1.0 / 3.0) < 0.01);

  double nsum = 0.0, nsum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double z = rng.normal();
    nsum += z;
    nsum2 += z * z;
  }
  CHECK(std::abs(nsum / n) < 0.05);
  CHECK(std::abs(nsum2 / n - 1.0) < 0.05);
}

TEST_CASE("rng permutation is a permutation and seeds are reproducible") {
  Rng a(7), b(7), c(8);
  std::vector<int> pa = a.permutation(50), pb = b.permutation(50), pc = c.permutation(50);
  CHECK(pa == pb);
  CHECK(pa != pc);
  std::set<int> seen(pa.begin(), pa.end());
  CHECK(seen.size() == 50);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 49);
}

TEST_CASE("derive_seed separates streams deterministically") {
  CHECK(derive_seed(1, 0) == derive_seed(1, 0));
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
}

TEST_CASE("example1 generation honors the spec") {
  SyntheticSpec spec;
  spec.scenario = Scenario::example1;
  spec.n = 150;
  spec.tau = 1.5;
  Dataset ds = generate(spec, 11);
  CHECK(ds.n() == 150);
  CHECK(ds.d() == 2);
  CHECK(ds.has_outcome());
  CHECK(ds.n1() + ds.n0() == 150);
  CHECK(ds.n1() > 0);
  CHECK(ds.n0() > 0);
  CHECK(ds.col_names == std::vector<std::string>{"x1", "x2"});
  CHECK(ds.true_sigma2 == 3.0);
  for (int i = 0; i < ds.n(); ++i) {
    CHECK((ds.T[i] == 0 || ds.T[i] == 1));
    CHECK(std::abs(ds.X(i, 0)) <= 1.0);
    CHECK(std::abs(ds.X(i, 1)) <= 1.0);
  }
  // response surface is the documented quadratic
  Eigen::RowVectorXd x(2);
  x << 0.3, -0.7;
  double expect = 0.3 * 0.3 + 0.7 * 0.7 - 0.5 * 0.3 - 0.5 * (-0.7);
  CHECK(ds.true_f0(x) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("scenario propensity matches its closed form") {
  Eigen::RowVectorXd x(2);
  x << 0.6, -0.8;  // norm 1
  CHECK(scenario_propensity(Scenario::example1, x) ==
        doctest::Approx(0.95 / (1.0 + 3.0 / std::sqrt(2.0))).epsilon(1e-12));
  Eigen::RowVectorXd x5 = Eigen::RowVectorXd::Zero(5);
  CHECK(scenario_propensity(Scenario::example5, x5) == doctest::Approx(0.95).epsilon(1e-12));
}

TEST_CASE("generation is reproducible by seed") {
  SyntheticSpec spec;
  spec.n = 80;
  Dataset a = generate(spec, 5), b = generate(spec, 5), c = generate(spec, 6);
  CHECK(a.X == b.X);
  CHECK(a.T == b.T);
  CHECK(a.Y == b.Y);
  CHECK(a.X != c.X);
}

TEST_CASE("tau enters as a constant additive treated shift") {
  SyntheticSpec s0;
  s0.n = 60;
  s0.sigma2 = 0.0;
  SyntheticSpec s1 = s0;
  s1.tau = 2.5;
  Dataset a = generate(s0, 9), b = generate(s1, 9);
  CHECK(a.X == b.X);
  CHECK(a.T == b.T);
  for (int i = 0; i < a.n(); ++i)
    CHECK(b.Y[i] - a.Y[i] == doctest::Approx(2.5 * a.T[i]).epsilon(1e-12));
}

TEST_CASE("example5 uses five covariates") {
  SyntheticSpec spec;
  spec.scenario = Scenario::example5;
  spec.n = 100;
  Dataset ds = generate(spec, 3);
  CHECK(ds.d() == 5);
  CHECK(ds.col_names.size() == 5);
}

TEST_CASE("no_overlap assigns treatment deterministically from the propensity") {
  SyntheticSpec spec;
  spec.scenario = Scenario::no_overlap;
  spec.n = 120;
  Dataset ds = generate(spec, 21);
  for (int i = 0; i < ds.n(); ++i) {
    double p = scenario_propensity(Scenario::no_overlap, ds.X.row(i));
    CHECK(ds.T[i] == (p > 0.4 ? 1 : 0));
  }
  CHECK(ds.n1() > 0);
  CHECK(ds.n0() > 0);
}

TEST_CASE("ihdp_analog has the fixed shape") {
  SyntheticSpec spec;
  spec.scenario = Scenario::ihdp_analog;
  spec.n = 9999;  // ignored
  Dataset ds = generate(spec, 4);
  CHECK(ds.n() == 373);
  CHECK(ds.n1() == 94);
  CHECK(ds.d() == 25);
  CHECK(ds.true_sigma2 == 1.0);
  for (int i = 0; i < ds.n(); ++i)
    for (int k = 6; k < 25; ++k) CHECK((ds.X(i, k) == 0.0 || ds.X(i, k) == 1.0));
}

TEST_CASE("redraw_outcomes keeps the design and applies the new surface") {
  SyntheticSpec spec;
  spec.n = 40;
  Dataset ds = generate(spec, 2);
  Eigen::MatrixXd X = ds.X;
  Eigen::VectorXi T = ds.T;
  Rng rng(77);
  redraw_outcomes(
      ds, [](const Eigen::RowVectorXd&) { return 0.0; }, 0.0, 5.0, rng);
  CHECK(ds.X == X);
  CHECK(ds.T == T);
  for (int i = 0; i < ds.n(); ++i) CHECK(ds.Y[i] == 5.0 * T[i]);
  CHECK(ds.true_sigma2 == 0.0);

  // same rng seed gives the same redraw
  Dataset d1 = generate(spec, 2), d2 = generate(spec, 2);
  Rng r1(5), r2(5);
  auto f0 = [](const Eigen::RowVectorXd& x) { return x(0); };
  redraw_outcomes(d1, f0, 1.0, 0.0, r1);
  redraw_outcomes(d2, f0, 1.0, 0.0, r2);
  CHECK(d1.Y == d2.Y);
}

TEST_CASE("scenario string round trip") {
  for (auto s : {Scenario::example1, Scenario::example5, Scenario::no_overlap,
                 Scenario::ihdp_analog})
    CHECK(scenario_from_string(scenario_to_string(s)) == s);
  CHECK_THROWS_AS(scenario_from_string("nope"), Error);
}

TEST_CASE("dataset slicing helpers agree with the index lists") {
  Dataset ds;
  ds.X.resize(4, 1);
  ds.X << 1.0, 2.0, 3.0, 4.0;
  ds.T.resize(4);
  ds.T << 1, 0, 1, 0;
  ds.Y.resize(4);
  ds.Y << 10.0, 20.0, 30.0, 40.0;
  ds.reindex();
  CHECK(ds.treated == std::vector<int>{0, 2});
  CHECK(ds.controls == std::vector<int>{1, 3});
  CHECK(ds.y_treated() == (Eigen::VectorXd(2) << 10.0, 30.0).finished());
  CHECK(ds.y_controls() == (Eigen::VectorXd(2) << 20.0, 40.0).finished());
  CHECK(ds.x_treated() == (Eigen::MatrixXd(2, 1) << 1.0, 3.0).finished());
  CHECK(ds.x_controls() == (Eigen::MatrixXd(2, 1) << 2.0, 4.0).finished());
}

TEST_CASE("reindex validates shapes") {
  Dataset ds;
  ds.X.resize(3, 2);
  ds.X.setZero();
  ds.T.resize(2);
  ds.T << 0, 1;
  CHECK_THROWS_AS(ds.reindex(), Error);
}

namespace {

Dataset tiny_labeled() {
  // one continuous column with 8 spread values, one binary column
  Dataset ds;
  ds.X.resize(8, 2);
  ds.X << 0.0, 0.0, 1.0, 1.0, 2.0, 0.0, 3.0, 1.0, 4.0, 0.0, 5.0, 1.0, 6.0, 0.0, 7.0, 1.0;
  ds.T.resize(8);
  ds.T << 1, 0, 1, 0, 1, 0, 1, 0;
  ds.Y.resize(8);
  ds.Y.setZero();
  ds.reindex();
  return ds;
}

}  // namespace

TEST_CASE("coarsen with explicit cuts produces the expected strata") {
  Dataset ds = tiny_labeled();
  CoarseningSpec spec;
  spec.cuts = {{3.5}, {}};  // split col 0 at 3.5; col 1 binary -> own levels
  CoarsenResult r = coarsen(ds, spec);
  CHECK(r.J == 4);  // 2 bins x 2 binary levels
  CHECK(static_cast<int>(r.label.size()) == 8);
  // strata must partition and the per-stratum counts must add up
  int tot1 = 0, tot0 = 0;
  for (int j = 0; j < r.J; ++j) {
    tot1 += r.n1j[j];
    tot0 += r.n0j[j];
    CHECK(r.n1j[j] + r.n0j[j] > 0);
  }
  CHECK(tot1 == 4);
  CHECK(tot0 == 4);
  // rows 0..3 (x0 < 3.5) never share a stratum with rows 4..7
  for (int i = 0; i < 4; ++i)
    for (int k = 4; k < 8; ++k) CHECK(r.label[i] != r.label[k]);
}

TEST_CASE("coarsen quantile bins split a balanced sample evenly") {
  Dataset ds = tiny_labeled();
  CoarseningSpec spec;
  spec.levels = 2;
  spec.columns = {0};
  CoarsenResult r = coarsen(ds, spec);
  CHECK(r.J == 2);
  std::vector<int> count(r.J, 0);
  for (int l : r.label) count[l]++;
  CHECK(count[0] == 4);
  CHECK(count[1] == 4);
}

TEST_CASE("coarsen labels are compact") {
  SyntheticSpec sp;
  sp.n = 60;
  Dataset ds = generate(sp, 13);
  CoarseningSpec spec;
  spec.levels = 3;
  CoarsenResult r = coarsen(ds, spec);
  std::vector<int> count(r.J, 0);
  for (int l : r.label) {
    CHECK(l >= 0);
    CHECK(l < r.J);
    count[l]++;
  }
  for (int j = 0; j < r.J; ++j) CHECK(count[j] > 0);
}

TEST_CASE("csv text round trip is exact") {
  SyntheticSpec spec;
  spec.n = 25;
  spec.tau = 0.7;
  Dataset ds = generate(spec, 31);
  std::string text = csv_text(ds);
  Dataset back = parse_csv_text(text);
  CHECK(back.n() == ds.n());
  CHECK(back.d() == ds.d());
  CHECK(back.X == ds.X);
  CHECK(back.T == ds.T);
  CHECK(back.Y == ds.Y);
  CHECK(back.col_names == ds.col_names);
}

TEST_CASE("csv file round trip is exact") {
  SyntheticSpec spec;
  spec.n = 12;
  Dataset ds = generate(spec, 8);
  std::string path = "test_data_roundtrip.csv";
  save_csv(ds, path);
  Dataset back = load_csv(path);
  std::remove(path.c_str());
  CHECK(back.X == ds.X);
  CHECK(back.T == ds.T);
  CHECK(back.Y == ds.Y);
}

TEST_CASE("csv without an outcome column") {
  Dataset ds = tiny_labeled();
  ds.Y.resize(0);
  CsvSchema schema;
  schema.outcome_col = "";
  std::string text = csv_text(ds, schema);
  Dataset back = parse_csv_text(text, schema);
  CHECK_FALSE(back.has_outcome());
  CHECK(back.X == ds.X);
}

TEST_CASE("csv parser rejects malformed input") {
  CHECK_THROWS_AS(parse_csv_text("a,b\n1,2\n"), Error);          // no treatment column
  CHECK_THROWS_AS(parse_csv_text("x,__t,__y\n1,0\n"), Error);    // ragged row
  CHECK_THROWS_AS(parse_csv_text("x,__t,__y\n1,zz,3\n"), Error); // non-numeric
  CHECK_THROWS_AS(parse_csv_text("x,__t,__y\n1,2,3\n"), Error);  // treatment not 0/1
}
