#pragma once

#include <Eigen/Dense>

namespace gom {

// Linear model fit. coef is [intercept, slopes...] when add_intercept, else just
// slopes in column order.
struct LinearFit {
  Eigen::VectorXd coef;
  bool add_intercept = true;
  int rank = 0;
  double sigma2 = 0.0;  // residual variance with n - rank denominator
  Eigen::VectorXd fitted;

  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;
  Eigen::VectorXd slopes() const {
    return add_intercept ? coef.tail(coef.size() - 1).eval() : coef;
  }
};

LinearFit fit_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, bool add_intercept = true);

// Weighted least squares; w must be nonnegative.
LinearFit fit_wls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                  bool add_intercept = true);

// Ridge with penalty lambda on every coefficient, or sparing the intercept when
// penalize_intercept is false. lambda = 0 reduces to least squares.
LinearFit fit_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda,
                    bool add_intercept = true, bool penalize_intercept = true);

// Binary logistic regression via Newton iterations with step halving. When the
// data are separable (coefficients diverge) the fit restarts with a tiny ridge
// penalty and marks ridged = true.
struct LogisticFit {
  Eigen::VectorXd coef;  // [intercept, slopes...]
  bool converged = false;
  bool ridged = false;
  int iterations = 0;

  Eigen::VectorXd predict_proba(const Eigen::MatrixXd& X) const;
};

LogisticFit fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXi& t, int max_iter = 100,
                         double tol = 1e-10);

}  // namespace gom
