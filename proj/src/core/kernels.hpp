#pragma once
#include <Eigen/Dense>
#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/error.hpp"

namespace gom {

enum class KernelFamily { polynomial, exponential, gaussian, matern, beppo_levi };

struct KernelSpec {
  KernelFamily family = KernelFamily::gaussian;
  int degree = 2;      // polynomial: (1 + x.y/degree)^degree
  double nu = 1.5;     // matern smoothness, one of {0.5, 1.5, 2.5}
  int bl_order = 2;    // beppo_levi order nu (integer), requires 2*bl_order > d
};

KernelFamily kernel_family_from_string(const std::string& s);
std::string kernel_family_to_string(KernelFamily f);

// Covariate rescaling x -> x * R^T fitted by the tuner. none keeps data as-is;
// diag holds log scales per dimension; full holds a lower-triangular factor
// with log-parameterized diagonal (kept nonsingular by construction).
enum class RescaleKind { none, diag, full };

struct Rescale {
  RescaleKind kind = RescaleKind::none;
  Eigen::VectorXd theta;  // diag: d log-scales; full: d*(d+1)/2 packed row-wise, diag in log

  Eigen::MatrixXd matrix(int d) const;  // the d x d rescale matrix R
  int n_params(int d) const;
  static int full_param_count(int d) { return d * (d + 1) / 2; }
};

double kernel_eval(const KernelSpec& spec, const Eigen::RowVectorXd& x,
                   const Eigen::RowVectorXd& y);

struct GramBundle {
  Eigen::MatrixXd K;        // n x n
  Eigen::MatrixXd G;        // m x n null-space features; 0 x n when unconditional
  bool conditional = false;
  std::vector<int> treated, controls;

  Eigen::MatrixXd block(const std::vector<int>& rows, const std::vector<int>& cols) const;
  Eigen::MatrixXd K11() const { return block(treated, treated); }
  Eigen::MatrixXd K10() const { return block(treated, controls); }
  Eigen::MatrixXd K00() const { return block(controls, controls); }
};

// Gram over rows of X (optionally rescaled). treated/controls carried for block views.
GramBundle gram(const Eigen::MatrixXd& X, const KernelSpec& spec,
                const std::vector<int>& treated, const std::vector<int>& controls,
                const Rescale& rescale = {});

GramBundle gram(const Dataset& ds, const KernelSpec& spec, const Rescale& rescale = {});

// Monomial features of degree <= order-1 (graded lexicographic), m = C(d+order-1, d) rows.
Eigen::MatrixXd null_space_features(const Eigen::MatrixXd& X, int order);

// Gram of X after rescale, plus per-parameter derivative Grams dK/dtheta_p
// (used by marginal-likelihood gradients).
void gram_with_grads(const Eigen::MatrixXd& X, const KernelSpec& spec, const Rescale& rescale,
                     Eigen::MatrixXd& K, std::vector<Eigen::MatrixXd>& dK);

}  // namespace gom
