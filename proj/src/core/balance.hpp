#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/kernels.hpp"

namespace gom {

enum class WeightSpace { general, simplex, b_simplex, subset, multisubset };

WeightSpace weight_space_from_string(const std::string& s);
std::string weight_space_to_string(WeightSpace s);

// Weights over control units (order matches Dataset::controls).
struct Weights {
  Eigen::VectorXd w;
  WeightSpace space = WeightSpace::simplex;
  double b = 1.0;       // per-unit cap for b_simplex
  int subset_size = 0;  // n0' for subset/multisubset

  int n0() const { return static_cast<int>(w.size()); }
};

// Everything except general sums to one with nonnegative entries.
bool simplex_family(WeightSpace s);

// Enforces the space invariants (sum within 1e-10, cap within 1e-12, grid
// membership for subset spaces); throws Errc::invalid_argument on violation.
void validate_weights(const Weights& w);

enum class MetricKind { rkhs, lipschitz, caliper_avg, coarsened_lp, linear_l2, linear_lp, mixed };

MetricKind metric_kind_from_string(const std::string& s);
std::string metric_kind_to_string(MetricKind k);

enum class DistanceKind { euclidean, mahalanobis_sqrt, mahalanobis_raw, precomputed };

DistanceKind distance_kind_from_string(const std::string& s);
std::string distance_kind_to_string(DistanceKind k);

// Pairwise distance choice for transport-based metrics. precomputed expects the
// full n x n symmetric matrix with zero diagonal over all units.
struct MetricSpec {
  DistanceKind kind = DistanceKind::mahalanobis_sqrt;
  Eigen::MatrixXd precomputed;
};

// Imbalance metric selector. p is the function-class norm exponent for
// coarsened_lp / linear_lp (1, 2, or infinity); the evaluated discrepancy norm
// is its conjugate. mixed combines two component metrics as A + rho * B.
struct BalanceMetric {
  MetricKind kind = MetricKind::rkhs;
  KernelSpec kernel;        // rkhs
  Rescale rescale;          // rkhs
  MetricSpec distance;      // lipschitz / caliper_avg
  CoarseningSpec coarsening;  // coarsened_lp
  double p = 1.0;           // coarsened_lp / linear_lp exponent (1, 2, inf)
  Eigen::MatrixXd V;        // linear_l2 weighting matrix; empty = identity
  std::shared_ptr<BalanceMetric> mix_a, mix_b;
  double rho = 1.0;

  static BalanceMetric make_rkhs(const KernelSpec& k, const Rescale& r = {});
  static BalanceMetric make_lipschitz(const MetricSpec& d = {});
  static BalanceMetric make_caliper(const MetricSpec& d = {});
  static BalanceMetric make_coarsened(const CoarseningSpec& c, double p);
  static BalanceMetric make_linear_l2(const Eigen::MatrixXd& V);
  static BalanceMetric make_linear_lp(double p);
  static BalanceMetric make_mixed(const BalanceMetric& a, const BalanceMetric& b, double rho);
};

// n1 x n0 distances between treated rows and control rows under the spec.
Eigen::MatrixXd distance_matrix(const Dataset& ds, const MetricSpec& spec);

// Distances between arbitrary unit index sets. Mahalanobis scaling always comes
// from the control covariance so the metric does not depend on the slice.
Eigen::MatrixXd distance_matrix(const Dataset& ds, const MetricSpec& spec,
                                const std::vector<int>& rows, const std::vector<int>& cols);

// Metric compiled against one dataset: shared read-only caches for evaluation.
struct BalanceContext {
  MetricKind kind;
  int n1 = 0, n0 = 0, n = 0;
  std::shared_ptr<const GramBundle> gb;  // rkhs
  Eigen::MatrixXd D;                     // lipschitz / caliper_avg
  CoarsenResult coarsen;                 // coarsened_lp
  Eigen::VectorXd treated_share;         // per-stratum treated mass
  std::vector<int> control_label;        // stratum of each control, in weight order
  double p = 1.0;
  Eigen::MatrixXd V;                     // linear_l2 (validated SPD)
  Eigen::RowVectorXd mean1;              // treated covariate mean
  Eigen::MatrixXd X0;                    // control covariates
  std::shared_ptr<BalanceContext> mix_a, mix_b;
  double rho = 1.0;
  double caliper_scale = 0.0;            // n(n-1), recorded for diagnostics
};

BalanceContext compile_metric(const Dataset& ds, const BalanceMetric& m);

// Dispatch on the compiled metric. Weights are validated first.
double imbalance(const BalanceContext& ctx, const Weights& w);

// sqrt of the signed quadratic form over the Gram matrix. Small negative values
// (round-off) clamp to zero; values materially below zero raise Errc::numeric.
// Conditional bundles return +inf unless the null-space means match within 1e-8.
double imbalance_rkhs(const Eigen::VectorXd& w, const GramBundle& gb);

// Transportation cost from the uniform treated measure to the weighted control
// measure over the n1 x n0 distance matrix. Simplex-family weights only.
double imbalance_lipschitz(const Weights& w, const Eigen::MatrixXd& D);

// Bottleneck transportation value (smallest max used-edge distance). Returned
// unscaled; the comparability constant n(n-1) is carried in diagnostics.
double imbalance_caliper(const Weights& w, const Eigen::MatrixXd& D);

// Conjugate-norm size of per-stratum mass discrepancies; p is the function-norm
// exponent (p = inf gives the sum of absolute stratum gaps).
double imbalance_coarsened(const Weights& w, const Dataset& ds, const CoarsenResult& c, double p);

// ||(1 - sum w, V^{1/2} mean-gap)||_2; the constant coordinate vanishes for
// simplex-family weights.
double imbalance_linear_l2(const Weights& w, const Eigen::RowVectorXd& mean1,
                           const Eigen::MatrixXd& X0, const Eigen::MatrixXd& V);

// Conjugate p-norm of the raw mean gap; general weights prepend 1 - sum w.
double imbalance_linear_lp(const Weights& w, const Eigen::RowVectorXd& mean1,
                           const Eigen::MatrixXd& X0, double p);

// sigma^2 (||w||^2 + 1/n1) for homoskedastic noise.
double variance_term(const Weights& w, double sigma2, int n1);

// sum w_i^2 s0_i + (1/n1^2) sum s1_i for per-unit variances.
double variance_term(const Weights& w, const Eigen::VectorXd& sigma2_controls,
                     const Eigen::VectorXd& sigma2_treated);

}  // namespace gom
