#include "core/epbr.hpp"

#include <cmath>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace gom {

namespace {

// Symmetric pseudo-inverse with an explicit rank report, cutoff relative to
// the largest eigenvalue.
Eigen::MatrixXd pinv_with_rank(const Eigen::MatrixXd& A, double rel_cut, double power,
                               int* rank_out) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  require(es.info() == Eigen::Success, Errc::numeric, "studentize: eigensolver failed");
  const Eigen::VectorXd& ev = es.eigenvalues();
  double cut = rel_cut * std::max(0.0, ev.maxCoeff());
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(ev.size());
  int rank = 0;
  for (int i = 0; i < ev.size(); ++i)
    if (ev[i] > cut && ev[i] > 0) {
      inv[i] = std::pow(ev[i], power);
      ++rank;
    }
  if (rank_out) *rank_out = rank;
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

StudentizedView studentize(const Dataset& ds) {
  require(ds.n0() >= 2, Errc::invalid_argument, "studentize: needs at least two controls");
  const int d = ds.d();
  Eigen::RowVectorXd mu = ds.x_controls().colwise().mean();
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(d, d);
  for (int j : ds.controls) {
    Eigen::RowVectorXd r = ds.X.row(j) - mu;
    C += r.transpose() * r;
  }
  C /= (ds.n0() - 1.0);

  StudentizedView out;
  Eigen::MatrixXd S = pinv_with_rank(C, 1e-10, -0.5, &out.rank);
  out.Z = (ds.X.rowwise() - mu) * S;
  return out;
}

Dataset studentized_dataset(const Dataset& ds) {
  Dataset out = ds;
  out.X = studentize(ds).Z;
  return out;
}

StudentizedView kernel_studentize(const Eigen::MatrixXd& K, const std::vector<int>& treated,
                                  const std::vector<int>& controls) {
  const int n = static_cast<int>(K.rows());
  require(K.cols() == n, Errc::dimension, "kernel_studentize: Gram must be square");
  require(!controls.empty(), Errc::invalid_argument, "kernel_studentize: no controls");
  (void)treated;

  Eigen::MatrixXd E0 = Eigen::MatrixXd::Zero(n, n);
  for (int j : controls) E0.col(j).setConstant(1.0 / controls.size());
  Eigen::MatrixXd P = Eigen::MatrixXd::Identity(n, n) - E0;
  Eigen::MatrixXd KC = P * K * P.transpose();

  Eigen::MatrixXd A(n, controls.size());
  for (size_t l = 0; l < controls.size(); ++l) A.col(l) = KC.col(controls[l]);
  Eigen::MatrixXd M = A * A.transpose();

  StudentizedView out;
  Eigen::MatrixXd Minv = pinv_with_rank(M, 1e-10, -1.0, &out.rank);
  out.Kbar = KC * Minv * KC;
  return out;
}

EpbrReport epbr_harness(const WeightMethod& method, const EpbrOptions& opts) {
  const int d = opts.d, n = opts.n;
  require(n >= 4 && d >= 1, Errc::invalid_argument, "epbr_harness: sample too small");
  int n1 = opts.n1 > 0 ? opts.n1 : std::max(2, n / 4);
  require(n1 >= 2 && n - n1 >= 2, Errc::invalid_argument, "epbr_harness: bad group sizes");
  const int R = opts.replications;
  require(R >= 2, Errc::invalid_argument, "epbr_harness: need at least two replications");

  Eigen::VectorXd mu1 = opts.mu1.size() ? opts.mu1 : Eigen::VectorXd::Unit(d, 0);
  Eigen::VectorXd mu0 = opts.mu0.size() ? opts.mu0 : Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd L =
      opts.sigma_chol.size() ? opts.sigma_chol : Eigen::MatrixXd::Identity(d, d);
  require(mu1.size() == d && mu0.size() == d && L.rows() == d && L.cols() == d, Errc::dimension,
          "epbr_harness: shape mismatch in the pair specification");

  Eigen::MatrixXd gaps_m(R, d), gaps_raw(R, d);
  for (int r = 0; r < R; ++r) {
    Rng rng(derive_seed(opts.seed, static_cast<std::uint64_t>(r)));
    Dataset ds;
    ds.X.resize(n, d);
    ds.T.resize(n);
    for (int i = 0; i < n; ++i) {
      bool tr = i < n1;
      Eigen::VectorXd z(d);
      for (int k = 0; k < d; ++k) z[k] = rng.normal();
      Eigen::VectorXd x = (tr ? mu1 : mu0) + std::sqrt(tr ? opts.scale1 : opts.scale0) * (L * z);
      ds.X.row(i) = x.transpose();
      ds.T[i] = tr ? 1 : 0;
    }
    if (opts.attach_outcomes) {
      ds.Y.resize(n);
      for (int i = 0; i < n; ++i) ds.Y[i] = rng.normal();
    }
    ds.reindex();

    Eigen::VectorXd w = method(ds);
    require(static_cast<int>(w.size()) == ds.n0(), Errc::dimension,
            "epbr_harness: method returned a wrong-sized weight vector");
    Eigen::RowVectorXd t_mean = ds.x_treated().colwise().mean();
    Eigen::RowVectorXd wc = w.transpose() * ds.x_controls();
    Eigen::RowVectorXd uc = ds.x_controls().colwise().mean();
    gaps_m.row(r) = t_mean - wc;
    gaps_raw.row(r) = t_mean - uc;
  }

  EpbrReport rep;
  rep.mean_gap_method = gaps_m.colwise().mean().transpose();
  rep.mean_gap_raw = gaps_raw.colwise().mean().transpose();

  double raw_norm = rep.mean_gap_raw.norm();
  require(raw_norm > 1e-12, Errc::numeric, "epbr_harness: raw gap vanished; increase the mean shift");
  Eigen::VectorXd u = rep.mean_gap_raw / raw_norm;

  // projections onto the raw-gap axis, per replication
  Eigen::VectorXd proj = gaps_m * u;
  double alpha = proj.mean() / raw_norm;
  double proj_var = (proj.array() - proj.mean()).square().sum() / (R - 1.0);
  rep.alpha_hat = alpha;
  rep.alpha_se = std::sqrt(proj_var / R) / raw_norm;

  Eigen::VectorXd off = rep.mean_gap_method - alpha * rep.mean_gap_raw;
  rep.off_axis_norm = off.norm();
  // aggregate MC uncertainty: per-coordinate variances of the method gap
  double var_sum = 0.0;
  for (int k = 0; k < d; ++k) {
    double m = gaps_m.col(k).mean();
    var_sum += (gaps_m.col(k).array() - m).square().sum() / (R - 1.0);
  }
  rep.mc_se = std::sqrt(var_sum / R);
  rep.off_axis_se = rep.mc_se;
  rep.pass = rep.off_axis_norm <= 3.0 * rep.off_axis_se &&
             std::abs(rep.alpha_hat) <= 1.0 + 3.0 * rep.alpha_se;
  return rep;
}

}  // namespace gom
