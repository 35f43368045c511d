#pragma once
#include <Eigen/Dense>
#include <functional>
#include <limits>
#include <string>

namespace gom {

// Returns f(x); fills *grad when grad is non-null.
using GradObjective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;
using PlainObjective = std::function<double(const Eigen::VectorXd&)>;

struct OptimResult {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::infinity();
  double grad_norm = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;      // gradient norm reached the tolerance
  bool used_fallback = false;  // derivative-free restart took over
  std::string note;
};

struct OptimOptions {
  int max_iter = 400;
  double grad_tol = 1e-8;
  int memory = 8;
  int max_line_search = 50;
  bool allow_fallback = true;
};

// Limited-memory quasi-Newton descent with a Wolfe line search. Falls back to
// Nelder-Mead when the objective or its gradient stops behaving (non-finite
// values, failed line searches).
OptimResult minimize_lbfgs(const GradObjective& f, const Eigen::VectorXd& x0,
                           const OptimOptions& opts = {});

// Derivative-free simplex search; also usable directly.
OptimResult minimize_nelder_mead(const PlainObjective& f, const Eigen::VectorXd& x0,
                                 int max_iter = 4000, double ftol = 1e-12);

}  // namespace gom
