#include "core/regress.hpp"

#include <algorithm>
#include <cmath>

#include "core/error.hpp"

namespace gom {

namespace {

Eigen::MatrixXd design(const Eigen::MatrixXd& X, bool add_intercept) {
  if (!add_intercept) return X;
  Eigen::MatrixXd D(X.rows(), X.cols() + 1);
  D.col(0).setOnes();
  D.rightCols(X.cols()) = X;
  return D;
}

}  // namespace

Eigen::VectorXd LinearFit::predict(const Eigen::MatrixXd& X) const {
  return design(X, add_intercept) * coef;
}

LinearFit fit_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, bool add_intercept) {
  require(X.rows() == y.size(), Errc::dimension, "regression rows mismatch");
  require(y.size() > 0, Errc::invalid_argument, "regression needs rows");
  const Eigen::MatrixXd D = design(X, add_intercept);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(D);
  qr.setThreshold(1e-10);
  LinearFit fit;
  fit.add_intercept = add_intercept;
  fit.coef = qr.solve(y);
  fit.rank = static_cast<int>(qr.rank());
  fit.fitted = D * fit.coef;
  const double dof = static_cast<double>(D.rows() - fit.rank);
  fit.sigma2 = dof > 0 ? (y - fit.fitted).squaredNorm() / dof : 0.0;
  return fit;
}

LinearFit fit_wls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                  bool add_intercept) {
  require(X.rows() == y.size() && w.size() == y.size(), Errc::dimension,
          "weighted regression rows mismatch");
  require(w.minCoeff() >= 0.0, Errc::invalid_argument, "regression weights must be nonnegative");
  const Eigen::VectorXd sw = w.array().sqrt();
  const Eigen::MatrixXd D = design(X, add_intercept);
  const Eigen::MatrixXd Dw = sw.asDiagonal() * D;
  const Eigen::VectorXd yw = sw.asDiagonal() * y;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Dw);
  qr.setThreshold(1e-10);
  LinearFit fit;
  fit.add_intercept = add_intercept;
  fit.coef = qr.solve(yw);
  fit.rank = static_cast<int>(qr.rank());
  fit.fitted = D * fit.coef;
  const double dof = static_cast<double>(D.rows() - fit.rank);
  fit.sigma2 = dof > 0 ? (yw - Dw * fit.coef).squaredNorm() / dof : 0.0;
  return fit;
}

LinearFit fit_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda,
                    bool add_intercept, bool penalize_intercept) {
  require(lambda >= 0.0, Errc::invalid_argument, "ridge penalty must be nonnegative");
  if (lambda == 0.0) return fit_ols(X, y, add_intercept);
  const Eigen::MatrixXd D = design(X, add_intercept);
  Eigen::MatrixXd H = D.transpose() * D;
  for (int j = 0; j < H.rows(); ++j) {
    if (j == 0 && add_intercept && !penalize_intercept) continue;
    H(j, j) += lambda;
  }
  LinearFit fit;
  fit.add_intercept = add_intercept;
  fit.coef = H.ldlt().solve(D.transpose() * y);
  fit.rank = static_cast<int>(D.cols());
  fit.fitted = D * fit.coef;
  const double dof = static_cast<double>(D.rows() - D.cols());
  fit.sigma2 = dof > 0 ? (y - fit.fitted).squaredNorm() / dof : 0.0;
  return fit;
}

Eigen::VectorXd LogisticFit::predict_proba(const Eigen::MatrixXd& X) const {
  const Eigen::VectorXd eta = design(X, true) * coef;
  return (1.0 / (1.0 + (-eta.array()).exp())).matrix();
}

LogisticFit fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXi& t, int max_iter,
                         double tol) {
  require(X.rows() == t.size(), Errc::dimension, "logistic rows mismatch");
  const Eigen::MatrixXd D = design(X, true);
  const int n = static_cast<int>(D.rows());
  const int p = static_cast<int>(D.cols());
  Eigen::VectorXd yv(n);
  for (int i = 0; i < n; ++i) {
    require(t[i] == 0 || t[i] == 1, Errc::invalid_argument, "logistic labels must be 0/1");
    yv[i] = static_cast<double>(t[i]);
  }

  auto nll = [&](const Eigen::VectorXd& beta, double ridge) {
    const Eigen::VectorXd eta = D * beta;
    // log(1 + e^eta) - y*eta, computed stably
    double v = 0.0;
    for (int i = 0; i < n; ++i) {
      const double e = eta[i];
      v += (e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e))) - yv[i] * e;
    }
    return v + 0.5 * ridge * beta.squaredNorm();
  };

  auto run = [&](double ridge, LogisticFit* out) {
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    double fcur = nll(beta, ridge);
    for (int it = 0; it < max_iter; ++it) {
      const Eigen::VectorXd eta = D * beta;
      const Eigen::VectorXd mu = (1.0 / (1.0 + (-eta.array()).exp())).matrix();
      const Eigen::VectorXd g = D.transpose() * (mu - yv) + ridge * beta;
      if (g.lpNorm<Eigen::Infinity>() < tol) {
        out->converged = true;
        out->iterations = it;
        break;
      }
      const Eigen::VectorXd wts = (mu.array() * (1.0 - mu.array())).max(1e-12).matrix();
      Eigen::MatrixXd H = D.transpose() * wts.asDiagonal() * D;
      H.diagonal().array() += ridge;
      const Eigen::VectorXd step = H.ldlt().solve(g);
      double alpha = 1.0;
      Eigen::VectorXd cand;
      double fnew = fcur;
      for (int h = 0; h < 40; ++h) {
        cand = beta - alpha * step;
        fnew = nll(cand, ridge);
        if (fnew <= fcur - 1e-12 * std::abs(fcur) || fnew < fcur) break;
        alpha *= 0.5;
      }
      if (fnew >= fcur) {
        out->iterations = it;
        break;  // no descent possible
      }
      beta = cand;
      fcur = fnew;
      if (beta.lpNorm<Eigen::Infinity>() > 30.0 && ridge == 0.0) {
        out->converged = false;
        out->iterations = it;
        return false;  // likely separation; caller retries with ridge
      }
    }
    out->coef = beta;
    return true;
  };

  LogisticFit fit;
  if (!run(0.0, &fit) || !fit.converged) {
    LogisticFit rfit;
    rfit.ridged = true;
    run(1e-6, &rfit);
    return rfit;
  }
  return fit;
}

}  // namespace gom
