#include "core/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "core/error.hpp"
#include "core/linalg.hpp"
#include "core/regress.hpp"
#include "core/rng.hpp"

namespace gom {

namespace {

// Maps control-indexed weights onto the full sample (treated entries zero).
Eigen::VectorXd spread_weights(const Dataset& ds, const Weights& w) {
  require(static_cast<int>(w.w.size()) == ds.n0(), Errc::dimension,
          "weights must have one entry per control");
  Eigen::VectorXd full = Eigen::VectorXd::Zero(ds.n());
  for (int j = 0; j < ds.n0(); ++j) full[ds.controls[j]] = w.w[j];
  return full;
}

Eigen::MatrixXd apply_rescale(const Eigen::MatrixXd& X, const Rescale& rs) {
  if (rs.kind == RescaleKind::none) return X;
  return X * rs.matrix(static_cast<int>(X.cols())).transpose();
}

// Kernel ridge predictions: fit on (Xtr, ytr), evaluate at Xte rows.
Eigen::VectorXd krr_predict(const Eigen::MatrixXd& Xtr, const Eigen::VectorXd& ytr,
                            const Eigen::MatrixXd& Xte, const KernelSpec& kernel,
                            const Rescale& rs, double lambda) {
  const int m = static_cast<int>(Xtr.rows());
  require(m >= 1, Errc::invalid_argument, "kernel ridge: empty training set");
  Eigen::MatrixXd Ztr = apply_rescale(Xtr, rs), Zte = apply_rescale(Xte, rs);
  Eigen::MatrixXd K(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = i; j < m; ++j) K(i, j) = K(j, i) = kernel_eval(kernel, Ztr.row(i), Ztr.row(j));
  Eigen::VectorXd alpha;
  if (lambda > 0) {
    alpha = cholesky_logdet(K + lambda * Eigen::MatrixXd::Identity(m, m)).llt.solve(ytr);
  } else {
    alpha = pinv_sym(K) * ytr;
  }
  Eigen::VectorXd out(Zte.rows());
  for (int i = 0; i < Zte.rows(); ++i) {
    double v = 0.0;
    for (int j = 0; j < m; ++j) v += kernel_eval(kernel, Zte.row(i), Ztr.row(j)) * alpha[j];
    out[i] = v;
  }
  return out;
}

}  // namespace

double normal_quantile(double p) {
  require(p > 0.0 && p < 1.0, Errc::invalid_argument, "normal_quantile: p must be in (0,1)");
  // Acklam's rational approximation with one Halley refinement.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  double x;
  if (p < plow) {
    double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= phigh) {
    double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    double q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
  x = x - u / (1 + x * u / 2);
  return x;
}

double tau_w(const Dataset& ds, const Weights& w) {
  require(ds.has_outcome(), Errc::invalid_argument, "tau_w: outcomes required");
  Eigen::VectorXd full = spread_weights(ds, w);
  return ds.y_treated().mean() - full.dot(ds.Y);
}

double tau_aw(const Dataset& ds, const Weights& w, const Eigen::VectorXd& fhat) {
  require(ds.has_outcome(), Errc::invalid_argument, "tau_aw: outcomes required");
  require(fhat.size() == ds.n(), Errc::dimension, "tau_aw: one prediction per unit required");
  Eigen::VectorXd resid = ds.Y - fhat;
  double treated_term = 0.0;
  for (int i : ds.treated) treated_term += resid[i];
  treated_term /= ds.n1();
  double control_term = 0.0;
  for (int j = 0; j < ds.n0(); ++j) control_term += w.w[j] * resid[ds.controls[j]];
  return treated_term - control_term;
}

Eigen::VectorXd fit_f0(const Dataset& ds, const F0Spec& spec) {
  require(ds.has_outcome(), Errc::invalid_argument, "fit_f0: outcomes required");
  require(ds.n0() >= 2, Errc::invalid_argument, "fit_f0: needs at least two controls");
  const Eigen::MatrixXd X0 = ds.x_controls();
  const Eigen::VectorXd y0 = ds.y_controls();

  switch (spec.mode) {
    case F0Mode::in_sample_ols: {
      LinearFit fit = fit_ols(X0, y0);
      return fit.predict(ds.X);
    }
    case F0Mode::in_sample_kernel_ridge:
      return krr_predict(X0, y0, ds.X, spec.kernel, spec.rescale, spec.lambda);
    case F0Mode::cross_fold: {
      const int n0 = ds.n0();
      int k = std::max(2, std::min(spec.folds, n0));
      Rng rng(spec.seed);
      std::vector<int> perm = rng.permutation(n0);
      std::vector<int> fold(n0);
      for (int pos = 0; pos < n0; ++pos) fold[perm[pos]] = pos % k;

      Eigen::VectorXd out(ds.n());
      // treated units (and everything else) predicted from the all-control fit
      if (spec.fold_base_ridge) {
        out = krr_predict(X0, y0, ds.X, spec.kernel, spec.rescale, spec.lambda);
      } else {
        out = fit_ols(X0, y0).predict(ds.X);
      }
      for (int f = 0; f < k; ++f) {
        std::vector<int> tr, te;
        for (int j = 0; j < n0; ++j) (fold[j] == f ? te : tr).push_back(j);
        if (te.empty()) continue;
        require(tr.size() >= 2, Errc::invalid_argument, "fit_f0: fold too small to train on");
        Eigen::MatrixXd Xtr(tr.size(), ds.d()), Xte(te.size(), ds.d());
        Eigen::VectorXd ytr(tr.size());
        for (size_t i = 0; i < tr.size(); ++i) {
          Xtr.row(i) = X0.row(tr[i]);
          ytr[i] = y0[tr[i]];
        }
        for (size_t i = 0; i < te.size(); ++i) Xte.row(i) = X0.row(te[i]);
        Eigen::VectorXd pred = spec.fold_base_ridge
                                   ? krr_predict(Xtr, ytr, Xte, spec.kernel, spec.rescale,
                                                 spec.lambda)
                                   : fit_ols(Xtr, ytr).predict(Xte);
        for (size_t i = 0; i < te.size(); ++i) out[ds.controls[te[i]]] = pred[i];
      }
      return out;
    }
  }
  fail(Errc::invalid_argument, "fit_f0: unknown mode");
}

double akw_closed(const Dataset& ds, const KernelSpec& kernel, double lambda,
                  const Rescale& rescale) {
  require(ds.has_outcome(), Errc::invalid_argument, "akw_closed: outcomes required");
  require(lambda >= 0, Errc::invalid_argument, "akw_closed: lambda must be nonnegative");
  GramBundle gb = gram(ds, kernel, rescale);
  require(!gb.conditional, Errc::unsupported,
          "akw_closed: needs an unconditional positive definite kernel");
  Eigen::MatrixXd K00 = gb.K00(), K10 = gb.K10();
  Eigen::VectorXd y0 = ds.y_controls(), y1 = ds.y_treated();
  Eigen::VectorXd adj;
  if (lambda > 0) {
    const int n0 = ds.n0();
    Eigen::LLT<Eigen::MatrixXd> llt =
        cholesky_logdet(K00 + lambda * Eigen::MatrixXd::Identity(n0, n0)).llt;
    Eigen::VectorXd t = llt.solve(y0);
    Eigen::VectorXd mid = K00 * t + 2.0 * lambda * t;
    adj = K10 * llt.solve(mid);
  } else {
    adj = K10 * (pinv_sym(K00) * y0);
  }
  return (y1 - adj).mean();
}

double tau_wls(const Dataset& ds, const Weights& w) {
  require(ds.has_outcome(), Errc::invalid_argument, "tau_wls: outcomes required");
  require(w.w.minCoeff() >= -1e-12, Errc::invalid_argument, "tau_wls: weights must be nonnegative");
  const int n = ds.n(), d = ds.d();
  Eigen::RowVectorXd mean1 = ds.x_treated().colwise().mean();
  Eigen::MatrixXd D(n, 2 + 2 * d);
  Eigen::VectorXd omega = spread_weights(ds, w);
  for (int i : ds.treated) omega[i] = 1.0 / ds.n1();
  for (int i = 0; i < n; ++i) {
    D(i, 0) = 1.0;
    D(i, 1) = ds.T[i];
    D.block(i, 2, 1, d) = ds.X.row(i);
    D.block(i, 2 + d, 1, d) = ds.T[i] ? (ds.X.row(i) - mean1).eval() : Eigen::RowVectorXd::Zero(d);
  }
  Eigen::VectorXd sq = omega.cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd Dw = sq.asDiagonal() * D;
  Eigen::VectorXd yw = sq.asDiagonal() * ds.Y;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Dw);
  require(qr.rank() == D.cols(), Errc::numeric, "tau_wls: singular weighted design");
  Eigen::VectorXd beta = qr.solve(yw);
  return beta[1];
}

CmseParts cmse_oracle(const Dataset& ds, const Weights& w) {
  require(static_cast<bool>(ds.true_f0) && std::isfinite(ds.true_sigma2), Errc::invalid_argument,
          "cmse_oracle: synthetic truth absent");
  double bias = 0.0;
  for (int i : ds.treated) bias += ds.true_f0(ds.X.row(i)) / ds.n1();
  for (int j = 0; j < ds.n0(); ++j) bias -= w.w[j] * ds.true_f0(ds.X.row(ds.controls[j]));
  double variance = ds.true_sigma2 * (w.w.squaredNorm() + 1.0 / ds.n1());
  return {bias, variance, bias * bias + variance};
}

double se_matching(const Dataset& ds, const Weights& w, const MetricSpec& metric, int k) {
  require(ds.has_outcome(), Errc::invalid_argument, "se_matching: outcomes required");
  require(k >= 1, Errc::invalid_argument, "se_matching: k must be >= 1");

  auto group_sig2 = [&](const std::vector<int>& idx) {
    const int m = static_cast<int>(idx.size());
    require(m >= 2, Errc::invalid_argument, "se_matching: a treatment group has a single unit");
    int kk = std::min(k, m - 1);
    Eigen::MatrixXd D = distance_matrix(ds, metric, idx, idx);
    Eigen::VectorXd sig2(m);
    for (int i = 0; i < m; ++i) {
      std::vector<int> order;
      order.reserve(m - 1);
      for (int j = 0; j < m; ++j)
        if (j != i) order.push_back(j);
      std::partial_sort(order.begin(), order.begin() + kk, order.end(), [&](int a, int b) {
        if (D(i, a) != D(i, b)) return D(i, a) < D(i, b);
        return a < b;
      });
      double nn_mean = 0.0;
      for (int t = 0; t < kk; ++t) nn_mean += ds.Y[idx[order[t]]];
      nn_mean /= kk;
      double diff = ds.Y[idx[i]] - nn_mean;
      sig2[i] = diff * diff * kk / (kk + 1.0);
    }
    return sig2;
  };

  Eigen::VectorXd sig2_c = group_sig2(ds.controls);
  Eigen::VectorXd sig2_t = group_sig2(ds.treated);
  double total = 0.0;
  for (int j = 0; j < ds.n0(); ++j) total += w.w[j] * w.w[j] * sig2_c[j];
  total += sig2_t.sum() / (static_cast<double>(ds.n1()) * ds.n1());
  return std::sqrt(total);
}

BootstrapResult bootstrap_ci(const Dataset& ds,
                             const std::function<double(const Dataset&)>& method, int B,
                             double alpha, std::uint64_t seed) {
  require(B >= 2, Errc::invalid_argument, "bootstrap_ci: need at least two resamples");
  require(alpha > 0 && alpha < 1, Errc::invalid_argument, "bootstrap_ci: alpha must be in (0,1)");
  const int n = ds.n();
  std::vector<double> draws;
  draws.reserve(B);
  int skipped = 0;
  for (int b = 0; b < B; ++b) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    Dataset rs;
    rs.X.resize(n, ds.d());
    rs.T.resize(n);
    rs.Y.resize(n);
    rs.col_names = ds.col_names;
    rs.true_f0 = ds.true_f0;
    rs.true_sigma2 = ds.true_sigma2;
    for (int i = 0; i < n; ++i) {
      int pick = rng.uniform_int(n);
      rs.X.row(i) = ds.X.row(pick);
      rs.T[i] = ds.T[pick];
      rs.Y[i] = ds.Y[pick];
    }
    rs.reindex();
    if (rs.n1() == 0 || rs.n0() == 0) {
      ++skipped;
      continue;
    }
    try {
      double v = method(rs);
      if (std::isfinite(v)) {
        draws.push_back(v);
      } else {
        ++skipped;
      }
    } catch (const Error&) {
      ++skipped;
    }
  }
  require(skipped * 2 <= B, Errc::numeric,
          "bootstrap_ci: more than half of the resamples were unusable");
  std::sort(draws.begin(), draws.end());
  auto quantile = [&](double p) {
    double h = p * (draws.size() - 1);
    size_t lo = static_cast<size_t>(std::floor(h));
    size_t hi = std::min(lo + 1, draws.size() - 1);
    double frac = h - lo;
    return draws[lo] * (1 - frac) + draws[hi] * frac;
  };
  BootstrapResult out;
  out.ci = {quantile(alpha / 2), quantile(1 - alpha / 2)};
  out.skipped = skipped;
  out.effective = static_cast<int>(draws.size());
  return out;
}

Interval partial_id_interval(double tau, double gamma_hat, double imbalance) {
  require(gamma_hat >= 0, Errc::invalid_argument, "partial_id: gamma_hat must be nonnegative");
  require(imbalance >= 0, Errc::invalid_argument, "partial_id: imbalance must be nonnegative");
  double half = gamma_hat * imbalance;
  return {tau - half, tau + half};
}

Interval robust_interval(const Interval& partial, double se, double alpha) {
  require(se >= 0, Errc::invalid_argument, "robust_interval: se must be nonnegative");
  double z = normal_quantile(1 - alpha / 2);
  return {partial.lo - z * se, partial.hi + z * se};
}

}  // namespace gom
