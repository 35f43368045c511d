#include "core/tune.hpp"

#include <cmath>
#include <limits>

#include "core/error.hpp"
#include "core/lbfgs.hpp"
#include "core/linalg.hpp"
#include "core/rng.hpp"

namespace gom {

namespace {

constexpr double kLambdaCap = 1e12;
constexpr double kPi = 3.141592653589793238462643383279502884;

double clamp_ratio(double sigma2, double gamma2) {
  double r = sigma2 / std::max(gamma2, 1e-12);
  if (!std::isfinite(r) || r > kLambdaCap) return kLambdaCap;
  return std::max(r, 0.0);
}

Eigen::VectorXd centered(const Eigen::VectorXd& y) {
  return y.array() - y.mean();
}

// Fixed-kernel fast path: with K = U diag(l) U' the likelihood in (g2, s2)
// costs O(n) per evaluation once z = U'(y - ybar) is cached.
struct EigsCache {
  Eigen::VectorXd evals, z2;
  int n = 0;

  void init(const Eigen::MatrixXd& K, const Eigen::VectorXd& y0) {
    n = static_cast<int>(K.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
    require(es.info() == Eigen::Success, Errc::numeric, "marginal likelihood: eigensolver failed");
    evals = es.eigenvalues().cwiseMax(0.0);
    Eigen::VectorXd z = es.eigenvectors().transpose() * centered(y0);
    z2 = z.array().square();
  }

  double value_grad(double lg2, double ls2, Eigen::VectorXd* grad) const {
    double g2 = std::exp(lg2), s2 = std::exp(ls2);
    double f = 0.5 * n * std::log(2.0 * kPi);
    double dg = 0.0, ds = 0.0;
    for (int i = 0; i < n; ++i) {
      double m = g2 * evals[i] + s2;
      if (!(m > 0.0) || !std::isfinite(m)) return std::numeric_limits<double>::infinity();
      f += 0.5 * (z2[i] / m + std::log(m));
      double common = 0.5 * (m - z2[i]) / (m * m);
      dg += common * evals[i];
      ds += common;
    }
    if (grad) {
      (*grad)[0] = g2 * dg;
      (*grad)[1] = s2 * ds;
    }
    return f;
  }
};

}  // namespace

double neg_log_marglik(const Eigen::VectorXd& y0, const Eigen::MatrixXd& K, double gamma2,
                       double sigma2) {
  const int n = static_cast<int>(y0.size());
  require(n >= 1, Errc::invalid_argument, "neg_log_marglik: empty outcome vector");
  require(K.rows() == n && K.cols() == n, Errc::dimension, "neg_log_marglik: Gram size mismatch");
  require(gamma2 > 0 && sigma2 > 0, Errc::invalid_argument,
          "neg_log_marglik: variances must be positive");
  Eigen::MatrixXd M = gamma2 * K + sigma2 * Eigen::MatrixXd::Identity(n, n);
  CholResult ch = cholesky_logdet(M);
  Eigen::VectorXd r = centered(y0);
  double quad = r.dot(ch.llt.solve(r));
  return 0.5 * quad + 0.5 * ch.logdet + 0.5 * n * std::log(2.0 * kPi);
}

double marglik_value_grad(const Eigen::VectorXd& y0, const GramBuilder& builder,
                          const Eigen::VectorXd& p, int theta_dim, Eigen::VectorXd* grad) {
  const int n = static_cast<int>(y0.size());
  const double g2 = std::exp(p[theta_dim]);
  const double s2 = std::exp(p[theta_dim + 1]);
  if (!std::isfinite(g2) || !std::isfinite(s2) || g2 <= 0 || s2 <= 0)
    return std::numeric_limits<double>::infinity();

  Eigen::MatrixXd K;
  std::vector<Eigen::MatrixXd> dK;
  builder(p.head(theta_dim), K, grad ? &dK : nullptr);

  Eigen::MatrixXd M = g2 * K + s2 * Eigen::MatrixXd::Identity(n, n);
  Eigen::LLT<Eigen::MatrixXd> llt(M);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  double logdet = 0.0;
  for (int i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));

  Eigen::VectorXd r = centered(y0);
  Eigen::VectorXd alpha = llt.solve(r);
  double f = 0.5 * r.dot(alpha) + 0.5 * logdet + 0.5 * n * std::log(2.0 * kPi);
  if (!grad) return f;

  // dl/dA for M = ... + A: -1/2 alpha alpha' + 1/2 M^-1, contracted with each
  // parameter's dM. Trace terms use the elementwise product of symmetric parts.
  Eigen::MatrixXd Minv = llt.solve(Eigen::MatrixXd::Identity(n, n));
  auto contract = [&](const Eigen::MatrixXd& dM) {
    return -0.5 * alpha.dot(dM * alpha) + 0.5 * Minv.cwiseProduct(dM).sum();
  };
  for (int k = 0; k < theta_dim; ++k) (*grad)[k] = g2 * contract(dK[k]);
  (*grad)[theta_dim] = g2 * contract(K);
  (*grad)[theta_dim + 1] = s2 * (-0.5 * alpha.squaredNorm() + 0.5 * Minv.trace());
  if (!grad->allFinite()) return std::numeric_limits<double>::infinity();
  return f;
}

namespace {

// Restart-loop core shared by the Gram-builder interface and the low-rank
// feature-space objective.
GpHyper optimize_hyper_obj(const GradObjective& obj, int theta_dim, const TuneOptions& opts) {
  require(theta_dim >= 0 && opts.restarts >= 1, Errc::invalid_argument,
          "optimize_hyper: bad restart configuration");
  const int dim = theta_dim + 2;
  const double ln10 = std::log(10.0);

  const Eigen::VectorXd unit = Eigen::VectorXd::Zero(dim);
  double unit_nll = obj(unit, nullptr);

  OptimOptions lopts;
  lopts.grad_tol = opts.grad_tol;
  lopts.max_iter = opts.max_iter;

  Eigen::VectorXd best_p = unit;
  double best_nll = unit_nll;
  bool improved = false;
  bool any_fallback = false;

  for (int t = 0; t < opts.restarts; ++t) {
    Eigen::VectorXd p0 = unit;
    if (t > 0) {
      Rng rng(derive_seed(opts.seed, static_cast<std::uint64_t>(t)));
      for (int k = 0; k < theta_dim; ++k) {
        bool logscale = opts.theta_log_scale.empty() || opts.theta_log_scale[k];
        double u = rng.uniform(-1.0, 1.0);
        if (logscale) p0[k] = u * ln10;  // raw entries stay at zero
      }
      p0[theta_dim] = rng.uniform(-1.0, 1.0) * ln10;
      p0[theta_dim + 1] = rng.uniform(-1.0, 1.0) * ln10;
    }
    OptimResult r = minimize_lbfgs(obj, p0, lopts);
    any_fallback = any_fallback || r.used_fallback;
    if (std::isfinite(r.value) && r.value < best_nll) {
      best_nll = r.value;
      best_p = r.x;
      improved = true;
    }
  }

  GpHyper out;
  out.restarts_used = opts.restarts;
  out.theta = best_p.head(theta_dim);
  out.gamma2 = std::exp(best_p[theta_dim]);
  out.sigma2 = std::exp(best_p[theta_dim + 1]);
  out.lambda_hat = clamp_ratio(out.sigma2, out.gamma2);
  out.nll = best_nll;
  if (!improved) out.warning = "no restart improved on the unit start";
  if (any_fallback && out.warning.empty()) out.warning = "derivative-free fallback was used";
  require(std::isfinite(out.nll), Errc::numeric,
          "optimize_hyper: likelihood not finite at every evaluated point");
  return out;
}

}  // namespace

void QuadFeatureMl::init(const Eigen::MatrixXd& X0, const Eigen::VectorXd& y0) {
  X = X0;
  r = centered(y0);
  n = static_cast<int>(X.rows());
  d = static_cast<int>(X.cols());
  m = 1 + d + d * (d + 1) / 2;
}

void QuadFeatureMl::features(const Eigen::VectorXd& theta, Eigen::MatrixXd& Phi,
                             std::vector<Eigen::MatrixXd>* dPhi) const {
  Eigen::ArrayXd s = theta.array().exp();
  Eigen::MatrixXd Z = X.array().rowwise() * s.transpose();
  Phi.resize(n, m);
  Phi.col(0).setOnes();
  Phi.block(0, 1, n, d) = Z;
  std::vector<std::pair<int, int>> pairs;
  int c = 1 + d;
  for (int k = 0; k < d; ++k)
    for (int l = k; l < d; ++l, ++c) {
      const double scale = (k == l) ? 0.5 : 1.0 / std::sqrt(2.0);
      Phi.col(c) = scale * Z.col(k).cwiseProduct(Z.col(l));
      pairs.emplace_back(k, l);
    }
  if (!dPhi) return;
  dPhi->assign(d, Eigen::MatrixXd::Zero(n, m));
  for (int k = 0; k < d; ++k) (*dPhi)[k].col(1 + k) = Z.col(k);
  c = 1 + d;
  for (const auto& [k, l] : pairs) {
    if (k == l) {
      (*dPhi)[k].col(c) = 2.0 * Phi.col(c);
    } else {
      (*dPhi)[k].col(c) = Phi.col(c);
      (*dPhi)[l].col(c) = Phi.col(c);
    }
    ++c;
  }
}

double QuadFeatureMl::value_grad(const Eigen::VectorXd& p, Eigen::VectorXd* grad) const {
  const double inf = std::numeric_limits<double>::infinity();
  const double g2 = std::exp(p[d]), s2 = std::exp(p[d + 1]);
  if (!std::isfinite(g2) || !std::isfinite(s2) || g2 <= 0 || s2 <= 0) return inf;

  Eigen::MatrixXd Phi;
  std::vector<Eigen::MatrixXd> dPhi;
  features(p.head(d), Phi, grad ? &dPhi : nullptr);
  if (!Phi.allFinite()) return inf;

  Eigen::MatrixXd G = Phi.transpose() * Phi;
  Eigen::MatrixXd C = g2 * G;
  C.diagonal().array() += s2;
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  if (llt.info() != Eigen::Success) return inf;
  double logdetC = 0.0;
  for (int i = 0; i < m; ++i) logdetC += 2.0 * std::log(llt.matrixL()(i, i));
  const double logdet = (n - m) * std::log(s2) + logdetC;

  Eigen::VectorXd ptr = Phi.transpose() * r;
  Eigen::VectorXd u = llt.solve(ptr);
  Eigen::VectorXd alpha = (r - g2 * (Phi * u)) / s2;
  double f = 0.5 * r.dot(alpha) + 0.5 * logdet + 0.5 * n * std::log(2.0 * kPi);
  if (!std::isfinite(f)) return inf;
  if (!grad) return f;

  Eigen::VectorXd pa = Phi.transpose() * alpha;
  Eigen::MatrixXd cinv_g = llt.solve(G);
  // contract(dM) = -1/2 a'dM a + 1/2 tr(M^-1 dM), with M^-1 expanded by the
  // Woodbury identity so every trace reduces to m x m products.
  (*grad)[d] =
      g2 * (-0.5 * pa.squaredNorm() +
            0.5 * (G.trace() - g2 * G.cwiseProduct(cinv_g).sum()) / s2);
  (*grad)[d + 1] = s2 * (-0.5 * alpha.squaredNorm() + 0.5 * (n - g2 * cinv_g.trace()) / s2);
  for (int k = 0; k < d; ++k) {
    Eigen::MatrixXd H = dPhi[k].transpose() * Phi;
    double quad_term = -alpha.dot(dPhi[k] * pa);
    double tr_term = (H.trace() - g2 * H.cwiseProduct(cinv_g.transpose()).sum()) / s2;
    (*grad)[k] = g2 * (quad_term + tr_term);
  }
  if (!grad->allFinite()) return inf;
  return f;
}

GpHyper optimize_hyper(const Eigen::VectorXd& y0, const GramBuilder& builder, int theta_dim,
                       const TuneOptions& opts) {
  require(y0.size() >= 1, Errc::invalid_argument, "optimize_hyper: empty outcome vector");
  require(theta_dim >= 0, Errc::invalid_argument, "optimize_hyper: negative parameter count");

  EigsCache cache;
  GradObjective obj;
  if (theta_dim == 0) {
    Eigen::MatrixXd K;
    builder(Eigen::VectorXd(0), K, nullptr);
    cache.init(K, y0);
    obj = [&cache](const Eigen::VectorXd& p, Eigen::VectorXd* g) {
      return cache.value_grad(p[0], p[1], g);
    };
  } else {
    obj = [&](const Eigen::VectorXd& p, Eigen::VectorXd* g) {
      return marglik_value_grad(y0, builder, p, theta_dim, g);
    };
  }
  return optimize_hyper_obj(obj, theta_dim, opts);
}

KomPpResult kom_pp(const Dataset& ds, const KernelSpec& kernel, WeightSpace space,
                   const KomPpOptions& opts) {
  require(ds.has_outcome(), Errc::invalid_argument, "kom_pp: outcomes required for tuning");
  require(ds.n0() >= 2, Errc::invalid_argument, "kom_pp: needs at least two controls");

  // Tuning consumes the data row by row, so it canonicalizes like the solvers
  // do; the weights come back in input order.
  CanonicalView cv = canonical_view(ds);
  if (!cv.identity) {
    KomPpResult out = kom_pp(cv.ds, kernel, space, opts);
    out.sol.weights.w = weights_to_input_order(cv, out.sol.weights.w);
    return out;
  }
  const Eigen::MatrixXd X0 = ds.x_controls();
  const Eigen::VectorXd y0 = ds.y_controls();
  const int d = ds.d();

  Rescale probe;
  probe.kind = opts.rescale;
  const int theta_dim = probe.n_params(d);

  GramBuilder builder = [&](const Eigen::VectorXd& theta, Eigen::MatrixXd& K,
                            std::vector<Eigen::MatrixXd>* dK) {
    Rescale rs;
    rs.kind = opts.rescale;
    rs.theta = theta;
    if (dK) {
      gram_with_grads(X0, kernel, rs, K, *dK);
    } else {
      K = gram(X0, kernel, {}, {}, rs).K;
    }
  };

  TuneOptions topts = opts.tune;
  if (opts.rescale == RescaleKind::full && topts.theta_log_scale.empty()) {
    topts.theta_log_scale.assign(theta_dim, false);
    int p = 0;
    for (int a = 0; a < d; ++a)
      for (int b = 0; b <= a; ++b, ++p)
        if (a == b) topts.theta_log_scale[p] = true;
  }

  KomPpResult out;
  const int m_feat = 1 + d + d * (d + 1) / 2;
  if (kernel.family == KernelFamily::polynomial && kernel.degree == 2 &&
      opts.rescale == RescaleKind::diag && 2 * m_feat <= ds.n0()) {
    QuadFeatureMl ml;
    ml.init(X0, y0);
    out.hyper = optimize_hyper_obj(
        [&ml](const Eigen::VectorXd& p, Eigen::VectorXd* g) { return ml.value_grad(p, g); },
        theta_dim, topts);
  } else {
    out.hyper = optimize_hyper(y0, builder, theta_dim, topts);
  }
  out.rescale.kind = opts.rescale;
  out.rescale.theta = out.hyper.theta;

  double lam = out.hyper.lambda_hat >= kLambdaCap ? std::numeric_limits<double>::infinity()
                                                  : out.hyper.lambda_hat;
  out.sol = kom(ds, kernel, space, lam, out.rescale, opts.b, opts.subset_size);
  out.sol.diag["gamma2_hat"] = out.hyper.gamma2;
  out.sol.diag["sigma2_hat"] = out.hyper.sigma2;
  out.sol.diag["gamma_hat"] = std::sqrt(out.hyper.gamma2);
  out.sol.diag["lambda_hat"] = out.hyper.lambda_hat;
  out.sol.diag["nll"] = out.hyper.nll;
  out.sol.diag["restarts_used"] = out.hyper.restarts_used;
  if (!out.hyper.warning.empty()) out.sol.note = out.hyper.warning;
  return out;
}

AffineCheckReport affine_invariance_check(const Dataset& ds, const KernelSpec& kernel,
                                          WeightSpace space, const KomPpOptions& opts,
                                          const Eigen::MatrixXd& A, const Eigen::VectorXd& a) {
  require(A.rows() == ds.d() && A.cols() == ds.d() && a.size() == ds.d(), Errc::dimension,
          "affine_invariance_check: map shape mismatch");
  KomPpResult base = kom_pp(ds, kernel, space, opts);

  Dataset mapped = ds;
  mapped.X = ds.X * A.transpose();
  mapped.X.rowwise() += a.transpose();
  KomPpResult moved = kom_pp(mapped, kernel, space, opts);

  AffineCheckReport rep;
  rep.max_weight_dev = (base.sol.weights.w - moved.sol.weights.w).cwiseAbs().maxCoeff();
  rep.lambda_dev = std::abs(base.hyper.lambda_hat - moved.hyper.lambda_hat);
  return rep;
}

}  // namespace gom
