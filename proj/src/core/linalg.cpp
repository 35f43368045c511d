#include "core/linalg.hpp"

#include <cmath>

namespace gom {

CholResult cholesky_logdet(const Eigen::MatrixXd& A) {
  require(A.rows() == A.cols(), Errc::dimension, "cholesky_logdet: matrix not square");
  const int n = static_cast<int>(A.rows());
  require(n > 0, Errc::dimension, "cholesky_logdet: empty matrix");
  double scale = A.trace() / n;
  if (!(scale > 0.0)) scale = 1.0;

  CholResult out;
  double jitter = 0.0;
  for (int attempt = 0; attempt <= 9; ++attempt) {
    Eigen::MatrixXd M = A;
    if (jitter > 0.0) M.diagonal().array() += jitter;
    out.llt.compute(M);
    if (out.llt.info() == Eigen::Success) {
      out.jitter = jitter;
      out.jittered = jitter > 0.0;
      out.logdet = 2.0 * out.llt.matrixLLT().diagonal().array().log().sum();
      return out;
    }
    jitter = (jitter == 0.0) ? 1e-12 * scale : jitter * 10.0;
    if (jitter > 1e-4 * scale) break;
  }
  fail(Errc::numeric, "cholesky_logdet: not positive definite within jitter budget");
}

Eigen::MatrixXd pinv_sqrt(const Eigen::MatrixXd& A, double rel_cut) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  require(es.info() == Eigen::Success, Errc::numeric, "pinv_sqrt: eigendecomposition failed");
  const Eigen::VectorXd& l = es.eigenvalues();
  double lmax = l.size() ? l.maxCoeff() : 0.0;
  double cut = rel_cut * std::max(lmax, 0.0);
  Eigen::VectorXd d = Eigen::VectorXd::Zero(l.size());
  for (int i = 0; i < l.size(); ++i)
    if (l(i) > cut) d(i) = 1.0 / std::sqrt(l(i));
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

Eigen::MatrixXd pinv_sym(const Eigen::MatrixXd& A, double rel_cut) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  require(es.info() == Eigen::Success, Errc::numeric, "pinv_sym: eigendecomposition failed");
  const Eigen::VectorXd& l = es.eigenvalues();
  double lmax = 0.0;
  for (int i = 0; i < l.size(); ++i) lmax = std::max(lmax, std::abs(l(i)));
  double cut = rel_cut * lmax;
  Eigen::VectorXd d = Eigen::VectorXd::Zero(l.size());
  for (int i = 0; i < l.size(); ++i)
    if (std::abs(l(i)) > cut) d(i) = 1.0 / l(i);
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

Eigen::MatrixXd null_space_basis(const Eigen::MatrixXd& G, double rel_cut) {
  const int n = static_cast<int>(G.cols());
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(G, Eigen::ComputeFullV);
  const Eigen::VectorXd& s = svd.singularValues();
  double smax = s.size() ? s(0) : 0.0;
  int rank = 0;
  for (int i = 0; i < s.size(); ++i)
    if (s(i) > rel_cut * std::max(smax, 1e-300)) ++rank;
  return svd.matrixV().rightCols(n - rank);
}

}  // namespace gom
