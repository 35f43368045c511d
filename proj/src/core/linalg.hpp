#pragma once
#include <Eigen/Dense>

#include "core/error.hpp"

namespace gom {

struct CholResult {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double logdet = 0.0;       // log det of the (jittered) matrix
  double jitter = 0.0;       // diagonal shift actually applied
  bool jittered = false;
};

// Cholesky with escalating diagonal jitter: starts at 1e-12 * tr/n, grows x10
// up to 1e-4 * tr/n, then errors. Reports the shift used.
CholResult cholesky_logdet(const Eigen::MatrixXd& A);

// Symmetric eigen-based pseudo-inverse square root; eigenvalues <= rel_cut * max
// are treated as zero. Returns V * diag(1/sqrt(l_i)) * V^T over the kept part.
Eigen::MatrixXd pinv_sqrt(const Eigen::MatrixXd& A, double rel_cut = 1e-10);

// Moore-Penrose pseudo-inverse of a symmetric PSD matrix with the same cutoff rule.
Eigen::MatrixXd pinv_sym(const Eigen::MatrixXd& A, double rel_cut = 1e-10);

// Orthonormal basis of the null space of G (m x n), columns span {x : Gx = 0}.
// Rank decided by singular values <= rel_cut * max.
Eigen::MatrixXd null_space_basis(const Eigen::MatrixXd& G, double rel_cut = 1e-12);

}  // namespace gom
