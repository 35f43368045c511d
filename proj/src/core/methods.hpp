#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "core/balance.hpp"
#include "core/dataset.hpp"
#include "core/kernels.hpp"

namespace gom {

// Weight-space + metric + exchange-rate specification of one solve.
struct GomSpec {
  WeightSpace space = WeightSpace::simplex;
  double b = 1.0;       // b_simplex cap
  int subset_size = 0;  // fixed cardinality; 0 = scan all cardinalities
  BalanceMetric metric;
  double lambda = 0.0;  // may be +inf
};

struct GomSolution {
  Weights weights;
  double imbalance = 0.0;
  double variance_term = 0.0;  // ||w||^2 + 1/n1 (unit noise variance)
  double objective = 0.0;      // imbalance^2 + lambda * ||w||^2 (finite lambda)
  double lambda = 0.0;
  std::string status = "ok";
  std::string note;                    // degenerate paths, estimand changes
  std::map<std::string, double> diag;  // kkt residual, cardinality, tuning metadata
};

// Every solver runs on a data-determined canonical row ordering (treated block
// first, then covariates lexicographically, then outcome; stable in the input
// order for exact ties) and maps weights back, so permuting input rows permutes
// the returned weights exactly, bit for bit. Tie-breaking rules such as the
// nearest-neighbor "lowest index" rule refer to the canonical order.
struct CanonicalView {
  Dataset ds;                    // populated only when identity is false
  std::vector<int> to_original;  // canonical row -> original row
  std::vector<int> control_slot; // original control position -> canonical one
  bool identity = true;
};

CanonicalView canonical_view(const Dataset& ds);
Eigen::VectorXd weights_to_input_order(const CanonicalView& cv, const Eigen::VectorXd& w_canon);

// One entry point dispatching on (space, metric, lambda); named constructors
// below cover the specialized routines with their extra parameters.
GomSolution solve_gom(const Dataset& ds, const GomSpec& spec);

// Per-treated nearest control, weights = match counts / n1.
GomSolution nnm(const Dataset& ds, const MetricSpec& metric = {});

// Optimal 1:1 assignment, weights in {0, 1/n1}; requires n0 >= n1.
GomSolution one_to_one(const Dataset& ds, const MetricSpec& metric = {});

// Balance-variance efficient NNM: transport-flow QP with ridge lambda on W.
// Optional cap turns the simplex into a b-simplex.
GomSolution bvennm(const Dataset& ds, const MetricSpec& metric, double lambda,
                   double cap = 1.0);

struct NnmPpOptions {
  int folds = 10;
  std::vector<double> psi_grid;  // empty = {0.1, 1, 10, 100, 1000, inf}
  uint64_t seed = 0;             // fold shuffle
};

// Cross-validated Lipschitz-regression tuning of lambda, then bvennm.
GomSolution nnm_pp(const Dataset& ds, const MetricSpec& metric = {},
                   const NnmPpOptions& opts = {});

// Bottleneck (smallest max pair distance) matching, with or without replacement.
GomSolution ocm(const Dataset& ds, const MetricSpec& metric, bool replacement);

// Stratum-proportional weights. Treated strata without controls either keep
// their mass deficit (default) or are pruned, which changes the estimand.
GomSolution cem(const Dataset& ds, const CoarseningSpec& c, bool prune_unmatched = false);

// Two-threshold scan solving the coarsened-L1 + ridge problem in closed form.
GomSolution bvecem(const Dataset& ds, const CoarseningSpec& c, double lambda);

// One-standard-error tuning of the stratum-range parameter, then bvecem.
GomSolution cem_pp(const Dataset& ds, const CoarseningSpec& c);

struct SubsetMethodOptions {
  int cardinality = 0;          // 0 = scan all sizes
  int enum_limit = 20;          // exhaustive search cutoff
  int bb_limit = 30;            // branch-and-bound cutoff (quadratic objectives)
  bool allow_heuristic = false; // permit greedy search past the exact limits
};

// Optimal mean matching under ||V^(1/2) gap||_2 over uniform subsets.
GomSolution omm(const Dataset& ds, const Eigen::MatrixXd& V, double lambda,
                const SubsetMethodOptions& opts = {});

// Mean matching under the conjugate p-norm of the gap (p = inf gives near-fine
// balance, p' = 1).
GomSolution omm_lp(const Dataset& ds, double p, double lambda,
                   const SubsetMethodOptions& opts = {});

// Greedy near-fine balance: grow the subset greedily, return the best prefix.
GomSolution gnfb(const Dataset& ds, double p);

// OLS-tuned lambda = sigma^2/||beta||_p^2, then the subsets-space scan.
GomSolution onfb_pp(const Dataset& ds, double p);

// Kernel optimal matching over the requested space. Conditional kernels
// forward to skom.
GomSolution kom(const Dataset& ds, const KernelSpec& kernel, WeightSpace space, double lambda,
                const Rescale& rescale = {}, double b = 1.0, int subset_size = 0);

// Conditionally-PSD kernel matching with exact null-space balance constraints.
GomSolution skom(const Dataset& ds, const KernelSpec& kernel, WeightSpace space, double lambda,
                 double b = 1.0);

// General-space linear-kernel weights reproducing ridge/OLS interaction
// adjustment on (1, x) features.
GomSolution regression_as_gom(const Dataset& ds, double lambda);

struct MixedMethodOptions {
  int cardinality = 0;            // 0 = scan all sizes
  long long node_budget = 300000; // branch-and-bound node cap
};

// Pair-distance + mean-gap subset matching (transport inner solve, exhaustive
// or branch-and-bound outer search over subsets). n0 <= 30.
GomSolution mixed_method(const Dataset& ds, const BalanceMetric& metric, double lambda,
                         const MixedMethodOptions& opts = {});

}  // namespace gom
