#pragma once
#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "core/balance.hpp"
#include "core/dataset.hpp"
#include "core/kernels.hpp"

namespace gom {

struct Interval {
  double lo = 0.0, hi = 0.0;
  double width() const { return hi - lo; }
  bool contains(double v) const { return lo <= v && v <= hi; }
};

struct EstimateReport {
  double tau_hat = 0.0;
  std::string estimator;  // weighting | augmented | akw_closed | wls
  std::optional<double> se;
  std::string se_method;
  std::optional<Interval> ci;          // tau_hat +- z se
  std::optional<double> bias_bound;    // gamma_hat * imbalance
  std::optional<Interval> partial_id;  // tau_hat -+ bias_bound
  std::optional<Interval> robust_ci;   // partial_id widened by z se
  double alpha = 0.05;
};

// Upper-alpha standard normal quantile helpers.
double normal_quantile(double p);

// Difference of the treated mean outcome and the weighted control outcome.
double tau_w(const Dataset& ds, const Weights& w);

// Same difference on residuals Y - fhat; fhat holds one prediction per unit.
double tau_aw(const Dataset& ds, const Weights& w, const Eigen::VectorXd& fhat);

// Control-outcome regression used by the augmented estimator.
enum class F0Mode { in_sample_ols, in_sample_kernel_ridge, cross_fold };

struct F0Spec {
  F0Mode mode = F0Mode::in_sample_ols;
  KernelSpec kernel;        // kernel ridge base
  Rescale rescale;          // optional rescale for the kernel
  double lambda = 1.0;      // ridge level
  int folds = 2;            // cross_fold split count over controls
  bool fold_base_ridge = false;  // cross_fold base: OLS unless set
  std::uint64_t seed = 0;
};

// Fits f0 on controls and predicts every unit. cross_fold predicts each control
// from the folds it was excluded from; treated units use the all-control fit.
Eigen::VectorXd fit_f0(const Dataset& ds, const F0Spec& spec);

// Closed-form augmented estimator for kernel-ridge f0 and ridge-inverse weights
// sharing one kernel and lambda. lambda = 0 uses the pseudo-inverse limit.
double akw_closed(const Dataset& ds, const KernelSpec& kernel, double lambda,
                  const Rescale& rescale = {});

// Coefficient on treatment from least squares with regressors
// [1, T, X, (X - treated mean X) * T] and unit weights T/n1 + (1-T) w.
double tau_wls(const Dataset& ds, const Weights& w);

struct CmseParts {
  double bias = 0.0;
  double variance = 0.0;  // squared scale
  double cmse = 0.0;      // bias^2 + variance
};

// Exact conditional bias / variance / MSE against the synthetic truth.
CmseParts cmse_oracle(const Dataset& ds, const Weights& w);

// Matching-based standard error: per-unit variances from same-group nearest
// neighbors, combined with the squared weights.
double se_matching(const Dataset& ds, const Weights& w, const MetricSpec& metric = {},
                   int k = 1);

struct BootstrapResult {
  Interval ci;
  int skipped = 0;    // resamples dropped for having an empty arm
  int effective = 0;  // resamples that produced an estimate
};

// Full-sample resampling with the entire method re-run per resample.
BootstrapResult bootstrap_ci(const Dataset& ds,
                             const std::function<double(const Dataset&)>& method, int B,
                             double alpha, std::uint64_t seed);

Interval partial_id_interval(double tau, double gamma_hat, double imbalance);
Interval robust_interval(const Interval& partial, double se, double alpha);

}  // namespace gom
