#pragma once
#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/kernels.hpp"
#include "core/methods.hpp"

namespace gom {

// Hyperparameters fitted on control outcomes by marginal likelihood. The ratio
// sigma2/gamma2 becomes the ridge level of the downstream weight solve.
struct GpHyper {
  Eigen::VectorXd theta;     // kernel rescale parameters (log for scale entries)
  double gamma2 = 1.0;       // signal variance
  double sigma2 = 1.0;       // noise variance
  double lambda_hat = 1.0;   // sigma2/gamma2 clamped to [0, 1e12]
  double nll = 0.0;          // achieved negative log marginal likelihood
  int restarts_used = 0;
  std::string warning;       // set when no restart improved on the unit start
};

// 1/2 (y-ybar)' (g2 K + s2 I)^-1 (y-ybar) + 1/2 log|g2 K + s2 I| + n/2 log 2pi.
double neg_log_marglik(const Eigen::VectorXd& y0, const Eigen::MatrixXd& K, double gamma2,
                       double sigma2);

// Maps rescale parameters to the control Gram; fills *dK with per-parameter
// derivative matrices when non-null.
using GramBuilder = std::function<void(const Eigen::VectorXd& theta, Eigen::MatrixXd& K,
                                       std::vector<Eigen::MatrixXd>* dK)>;

struct TuneOptions {
  int restarts = 10;
  std::uint64_t seed = 0;
  int max_iter = 400;
  double grad_tol = 1e-8;
  // theta entries that live in log space get multiplicative restart jitter;
  // empty means all of them do. Raw entries start at zero every restart.
  std::vector<bool> theta_log_scale;
};

// Analytic gradient of neg_log_marglik in (theta, log gamma2, log sigma2) at
// the packed point p; builder supplies K and dK. Exposed for testing.
double marglik_value_grad(const Eigen::VectorXd& y0, const GramBuilder& builder,
                          const Eigen::VectorXd& p, int theta_dim, Eigen::VectorXd* grad);

// Quasi-Newton descent in log-parameters, best of seeded random restarts.
GpHyper optimize_hyper(const Eigen::VectorXd& y0, const GramBuilder& builder, int theta_dim,
                       const TuneOptions& opts = {});

// Quadratic kernels with a diagonal rescale have the explicit feature map
// phi(z) = [1, z_k, z_k^2/2, z_k z_l/sqrt(2) (k<l)], z = exp(theta) o x, so
// K = Phi Phi' and the likelihood costs O(n m^2) per evaluation via the matrix
// determinant lemma instead of O(n^3). Public so tests can pin the equivalence
// with the generic dense objective.
struct QuadFeatureMl {
  Eigen::MatrixXd X;  // controls
  Eigen::VectorXd r;  // centered outcomes
  int n = 0, d = 0, m = 0;

  void init(const Eigen::MatrixXd& X0, const Eigen::VectorXd& y0);
  void features(const Eigen::VectorXd& theta, Eigen::MatrixXd& Phi,
                std::vector<Eigen::MatrixXd>* dPhi) const;
  // Packed point p = (theta, log gamma2, log sigma2); returns the negative log
  // marginal likelihood, filling *grad when non-null.
  double value_grad(const Eigen::VectorXd& p, Eigen::VectorXd* grad) const;
};

struct KomPpOptions {
  RescaleKind rescale = RescaleKind::none;  // diag = automatic relevance detection
  TuneOptions tune;
  double b = 1.0;       // cap for the capped-simplex space
  int subset_size = 0;  // fixed cardinality for subset spaces, 0 = free
};

struct KomPpResult {
  GomSolution sol;
  GpHyper hyper;
  Rescale rescale;
};

// Tunes (theta, gamma2, sigma2) on control data only, then solves the kernel
// weight problem on the full sample at lambda_hat with the fitted rescale.
KomPpResult kom_pp(const Dataset& ds, const KernelSpec& kernel, WeightSpace space,
                   const KomPpOptions& opts = {});

struct AffineCheckReport {
  double max_weight_dev = 0.0;
  double lambda_dev = 0.0;
};

// Re-tunes after mapping covariates x -> A x + a with the same restart seeds
// and compares the resulting weights. Full-matrix rescales should absorb the
// map; diagonal rescales under rotation generally will not.
AffineCheckReport affine_invariance_check(const Dataset& ds, const KernelSpec& kernel,
                                          WeightSpace space, const KomPpOptions& opts,
                                          const Eigen::MatrixXd& A, const Eigen::VectorXd& a);

}  // namespace gom
