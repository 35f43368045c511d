#pragma once
#include <json.hpp>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/estimate.hpp"
#include "core/methods.hpp"
#include "core/tune.hpp"

namespace gom {

// Inverse-propensity weights p/(n1 (1-p)) on controls from a logistic fit,
// clipped at `clip` (clip count reported in diagnostics). Not normalized.
GomSolution ipw_weights(const Dataset& ds, double clip = 1e4);

// 1:1 matching on the logit propensity distance without replacement.
GomSolution psm_weights(const Dataset& ds);

// Uniform control weights (no matching).
GomSolution uniform_weights(const Dataset& ds);

// Config-driven construction.
KernelSpec kernel_from_json(const nlohmann::json& j);
Rescale rescale_from_json(const nlohmann::json& j, int d);
MetricSpec distance_from_json(const nlohmann::json& j);
CoarseningSpec coarsening_from_json(const nlohmann::json& j);
BalanceMetric metric_from_json(const nlohmann::json& j);
double lambda_from_json(const nlohmann::json& j);  // number or "inf"

struct MethodRun {
  GomSolution sol;
  std::optional<GpHyper> hyper;  // present for marginal-likelihood methods
  std::string name;
};

// Dispatch on {"name": ..., parameters...}.
MethodRun run_method(const Dataset& ds, const nlohmann::json& method, std::uint64_t seed);

// Full estimate pipeline: method + estimator + interval configuration.
// {"method": {...}, "estimator": "tau_w|tau_aw|tau_wls|akw_closed",
//  "f0": {...}, "se": "matching|bootstrap|none", "bootstrap_b": 200,
//  "alpha": 0.05, "partial_id": bool, "gamma": override}
EstimateReport estimate_from_config(const Dataset& ds, const nlohmann::json& cfg,
                                    std::uint64_t seed);

// {"scenario": ..., "n":, "tau":, "sigma2":} or {"csv": path, "treatment_col":,
// "outcome_col":}.
Dataset dataset_from_config(const nlohmann::json& cfg, std::uint64_t seed);

// Largest per-covariate level count that keeps one control in every stratum
// holding a treated unit.
CoarseningSpec cem_auto_levels(const Dataset& ds, int max_levels = 8);

struct FrontierRow {
  double lambda = 0.0;  // NaN on reference rows
  double imbalance = 0.0;
  double norm2 = 0.0;  // ||w||^2
  double objective = 0.0;
  double cmse = 0.0;  // NaN without synthetic truth
  std::string label;  // empty for sweep rows
};

std::vector<FrontierRow> frontier_sweep(const Dataset& ds, const nlohmann::json& method,
                                        const std::vector<double>& lambdas, std::uint64_t seed);
std::string frontier_csv(const std::vector<FrontierRow>& rows);

struct BenchmarkCell {
  std::string method, estimator;
  double mse = 0.0, mc_se = 0.0;
  int reps = 0, failures = 0;
};

struct Ex5Result {
  std::vector<BenchmarkCell> cells;
  int reps = 0;
  double cell(const std::string& method, const std::string& estimator) const;
};

Ex5Result benchmark_ex5(int R, std::uint64_t seed, int jobs);

struct CoverageResult {
  double coverage_plain = 0.0;
  double coverage_robust = 0.0;       // over all usable redraws
  double coverage_robust_given = 0.0; // among redraws with gamma_hat >= f0 norm
  double given_fraction = 0.0;        // share of redraws with gamma_hat >= f0 norm
  double f0_norm = 0.0;               // RKHS norm of the planted f0 (no-overlap runs)
  double mean_ci_width = 0.0;
  int redraws = 0, failures = 0;
};

CoverageResult benchmark_coverage(int R, std::uint64_t seed, int jobs);
CoverageResult benchmark_no_overlap(int R, std::uint64_t seed, int jobs);

struct ConsistencyResult {
  std::vector<int> ns;
  std::vector<double> median_abs_err;
  int reps_per_n = 0, failures = 0;
};

ConsistencyResult benchmark_consistency(const std::vector<int>& ns, int reps,
                                        std::uint64_t seed, int jobs);

// CLI-facing wrapper: runs the scenario named in the config and produces the
// results table CSV plus a JSON summary.
struct BenchmarkOutput {
  std::string csv;
  nlohmann::json summary;
};

BenchmarkOutput run_benchmark(const nlohmann::json& cfg, std::uint64_t seed, int jobs);

// Deterministic worker pool: body(i) for i in [0, count), any execution order.
void parallel_for(int jobs, int count, const std::function<void(int)>& body);

}  // namespace gom
