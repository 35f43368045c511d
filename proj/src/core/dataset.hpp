#pragma once
#include <Eigen/Dense>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace gom {

struct Dataset {
  Eigen::MatrixXd X;  // n x d covariates
  Eigen::VectorXi T;  // n, 0/1 treatment
  Eigen::VectorXd Y;  // n, observed outcome; size 0 if absent
  std::vector<std::string> col_names;

  // Ground truth, present for synthetic data only (used by oracles/benchmarks).
  std::function<double(const Eigen::RowVectorXd&)> true_f0;
  double true_sigma2 = std::numeric_limits<double>::quiet_NaN();

  std::vector<int> treated;   // indices with T == 1
  std::vector<int> controls;  // indices with T == 0

  int n() const { return static_cast<int>(X.rows()); }
  int d() const { return static_cast<int>(X.cols()); }
  int n1() const { return static_cast<int>(treated.size()); }
  int n0() const { return static_cast<int>(controls.size()); }
  bool has_outcome() const { return Y.size() == X.rows(); }

  void reindex();  // rebuilds treated/controls from T and validates shapes

  Eigen::VectorXd y_controls() const;
  Eigen::VectorXd y_treated() const;
  Eigen::MatrixXd x_controls() const;
  Eigen::MatrixXd x_treated() const;
};

enum class Scenario { example1, example5, no_overlap, ihdp_analog };

struct SyntheticSpec {
  Scenario scenario = Scenario::example1;
  int n = 200;          // ignored for ihdp_analog (fixed 373)
  double tau = 0.0;     // constant additive treatment effect
  double sigma2 = -1;   // <0 means scenario default (3 for example scenarios, 1 for ihdp)
};

Scenario scenario_from_string(const std::string& s);
std::string scenario_to_string(Scenario s);

// Propensity used by example1/example5/no_overlap at covariate row x.
double scenario_propensity(Scenario s, const Eigen::RowVectorXd& x);

Dataset generate(const SyntheticSpec& spec, uint64_t seed);

// Redraw outcomes in place for fixed X, T: Y = f0(X) + tau*T + N(0, sigma2).
void redraw_outcomes(Dataset& ds, const std::function<double(const Eigen::RowVectorXd&)>& f0,
                     double sigma2, double tau, Rng& rng);

struct CsvSchema {
  std::string treatment_col = "__t";
  std::string outcome_col = "__y";  // empty string = no outcome column
};

Dataset load_csv(const std::string& path, const CsvSchema& schema = {});
Dataset parse_csv_text(const std::string& text, const CsvSchema& schema = {});
void save_csv(const Dataset& ds, const std::string& path, const CsvSchema& schema = {});
std::string csv_text(const Dataset& ds, const CsvSchema& schema = {});

// Coarsening: per-column bin counts (quantile bins over the full sample);
// columns with <= 2 distinct values pass through as their own levels.
// Explicit cut points may be given per column instead (override).
struct CoarseningSpec {
  int levels = 8;                              // default bins per continuous column
  std::vector<std::vector<double>> cuts;       // optional per-column explicit cut points
  std::vector<int> columns;                    // subset of columns to use; empty = all
};

struct CoarsenResult {
  std::vector<int> label;          // n, compact stratum id in [0, J)
  int J = 0;                       // number of nonempty strata
  std::vector<int> n1j, n0j;       // per-stratum treated/control counts
};

CoarsenResult coarsen(const Dataset& ds, const CoarseningSpec& spec);

}  // namespace gom
