#pragma once
#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "core/dataset.hpp"

namespace gom {

struct StudentizedView {
  Eigen::MatrixXd Z;     // transformed covariates (covariate path; empty otherwise)
  Eigen::MatrixXd Kbar;  // transformed Gram (kernel path; empty otherwise)
  int rank = 0;          // pseudo-inverse rank used
};

// Center by the control mean and whiten with the pseudo-inverse square root of
// the control covariance (eigenvalues <= 1e-10 * max treated as zero).
StudentizedView studentize(const Dataset& ds);

// Convenience: the same dataset with X replaced by its studentized version.
Dataset studentized_dataset(const Dataset& ds);

// Gram-level analogue: E(0) averages over controls, KC = (I-E0) K (I-E0)',
// M = KC[:,controls] KC[:,controls]', Kbar = KC pinv(M) KC.
StudentizedView kernel_studentize(const Eigen::MatrixXd& K, const std::vector<int>& treated,
                                  const std::vector<int>& controls);

// Method under test: control weights (summing to one) for a dataset.
using WeightMethod = std::function<Eigen::VectorXd(const Dataset&)>;

struct EpbrOptions {
  int replications = 2000;
  std::uint64_t seed = 0;
  int n = 40;
  int n1 = 0;  // 0 = n/4, at least 2
  int d = 2;
  Eigen::VectorXd mu1, mu0;    // group means; empty = e1 and 0
  Eigen::MatrixXd sigma_chol;  // shared covariance factor; empty = identity
  double scale1 = 1.0, scale0 = 1.0;  // proportional covariance multipliers
  bool attach_outcomes = false;       // iid standard normal Y, independent of X
};

struct EpbrReport {
  Eigen::VectorXd mean_gap_method;  // Monte-Carlo E[weighted mean gap]
  Eigen::VectorXd mean_gap_raw;     // same with uniform control weights
  double alpha_hat = 0.0;           // least-squares collinearity coefficient
  double alpha_se = 0.0;
  double off_axis_norm = 0.0;       // residual after removing the raw-gap axis
  double off_axis_se = 0.0;
  double mc_se = 0.0;               // aggregate Monte-Carlo SE of the gap mean
  bool pass = false;
};

// Draws proportionally ellipsoidal Gaussian pairs, applies the method, and
// tests that the expected gap stays collinear with the unweighted gap.
EpbrReport epbr_harness(const WeightMethod& method, const EpbrOptions& opts = {});

}  // namespace gom
