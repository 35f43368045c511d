#pragma once
#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <vector>

#include "core/error.hpp"

namespace gom {

// min 1/2 x'Qx + c'x  s.t.  Aeq x = beq,  lb <= x <= ub,  gl <= G x <= gu,
// optional simplex flag (sum x = 1, x >= 0 merged into bounds).
struct QpProblem {
  Eigen::SparseMatrix<double> Q;    // n x n, symmetric PSD (full matrix stored)
  Eigen::VectorXd c;
  Eigen::SparseMatrix<double> Aeq;  // may have 0 rows
  Eigen::VectorXd beq;
  Eigen::VectorXd lb, ub;           // empty => unbounded on that side
  bool simplex = false;
  Eigen::SparseMatrix<double> G;    // general two-sided rows, may have 0 rows
  Eigen::VectorXd gl, gu;

  int n() const { return static_cast<int>(c.size()); }
  void init(int nvars);
  void set_Q_dense(const Eigen::MatrixXd& Qd);
};

enum class QpStatus { solved, inaccurate, max_iter };

struct QpSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd y;        // multipliers, rows stacked as [Aeq; G; bounds; simplex row]
  double objective = 0.0;
  QpStatus status = QpStatus::max_iter;
  int iterations = 0;
  double kkt_residual = 0.0;  // max of stationarity, primal violation, complementarity
  bool polished = false;
};

struct QpOptions {
  double eps_abs = 1e-9;
  double eps_rel = 1e-9;
  int max_iter = 50000;
  bool polish = true;
  double sigma = 1e-6;
  double alpha = 1.6;
  double rho0 = 0.1;
  int check_every = 25;
};

// Operator-splitting solver with Ruiz equilibration, adaptive step, and an
// active-set polish pass (KKT solve + iterative refinement) for high accuracy.
// Throws Errc::infeasible on a primal-infeasibility or unboundedness certificate,
// Errc::numeric if the iteration budget is exhausted far from tolerance.
QpSolution solve_qp(const QpProblem& prob, const QpOptions& opts = {});

}  // namespace gom
