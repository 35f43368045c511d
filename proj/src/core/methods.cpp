#include "core/methods.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

#include "core/error.hpp"
#include "core/linalg.hpp"
#include "core/qp.hpp"
#include "core/regress.hpp"
#include "core/rng.hpp"
#include "core/subset.hpp"
#include "core/transport.hpp"

namespace gom {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Euclidean projection onto { 0 <= w <= cap, sum w = 1 } by bisection on the
// shift; the final rescale removes residual bisection slack.
Eigen::VectorXd project_capped_simplex(const Eigen::VectorXd& y, double cap) {
  const int n = static_cast<int>(y.size());
  require(cap * n >= 1.0 - 1e-9, Errc::infeasible, "cap too small: b * n0 < 1");
  double lo = y.minCoeff() - cap - 1.0, hi = y.maxCoeff();
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::min(cap, std::max(0.0, y[i] - mid));
    (s > 1.0 ? lo : hi) = mid;
  }
  const double tau = 0.5 * (lo + hi);
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) w[i] = std::min(cap, std::max(0.0, y[i] - tau));
  const double s = w.sum();
  if (s > 0.0) w /= s;
  return w;
}

// Repairs solver round-off only; a solution far from the feasible set is a bug.
void snap_simplex(Eigen::VectorXd& w, double cap) {
  Eigen::VectorXd p = project_capped_simplex(w, cap);
  require((p - w).cwiseAbs().maxCoeff() <= 1e-5, Errc::numeric,
          "weights returned by the solver are too far from the feasible set");
  w = p;
}

Weights weights_of(Eigen::VectorXd w, WeightSpace space, double b, int subset_size) {
  Weights out;
  out.w = std::move(w);
  out.space = space;
  out.b = b;
  out.subset_size = subset_size;
  return out;
}

// Validates, then recomputes imbalance / variance / objective from the weights
// themselves so every solver is scored by the same exact evaluators.
GomSolution finalize(const Dataset& ds, const BalanceMetric& metric, Weights w, double lambda,
                     std::map<std::string, double> diag = {}, std::string note = "",
                     std::string status = "ok") {
  validate_weights(w);
  const BalanceContext ctx = compile_metric(ds, metric);
  GomSolution sol;
  sol.weights = std::move(w);
  sol.imbalance = imbalance(ctx, sol.weights);
  sol.variance_term = variance_term(sol.weights, 1.0, ds.n1());
  sol.lambda = lambda;
  const double l2 = sol.weights.w.squaredNorm();
  sol.objective = std::isinf(lambda) ? sol.imbalance * sol.imbalance
                                     : sol.imbalance * sol.imbalance + lambda * l2;
  sol.status = std::move(status);
  sol.note = std::move(note);
  sol.diag = std::move(diag);
  return sol;
}

void merge_qp_diag(std::map<std::string, double>& diag, const QpSolution& qs) {
  diag["qp_iterations"] = qs.iterations;
  diag["qp_kkt_residual"] = qs.kkt_residual;
  diag["qp_polished"] = qs.polished ? 1.0 : 0.0;
}

// Sparse assembly helper for composite programs (weights + auxiliaries).
struct QpBuild {
  std::vector<Eigen::Triplet<double>> q, a, g;
  std::vector<double> beq_, gl_, gu_, lb_, ub_, c_;
  int nv = 0, na = 0, ng = 0;

  int var(double lo, double hi, double qdiag, double lin) {
    lb_.push_back(lo);
    ub_.push_back(hi);
    c_.push_back(lin);
    if (qdiag != 0.0) q.emplace_back(nv, nv, qdiag);
    return nv++;
  }
  int eq(double rhs) {
    beq_.push_back(rhs);
    return na++;
  }
  void eqc(int row, int v, double coef) { a.emplace_back(row, v, coef); }
  int row(double lo, double hi) {
    gl_.push_back(lo);
    gu_.push_back(hi);
    return ng++;
  }
  void rowc(int r, int v, double coef) { g.emplace_back(r, v, coef); }

  QpProblem build() const {
    QpProblem p;
    p.init(nv);
    p.Q.setFromTriplets(q.begin(), q.end());
    p.c = Eigen::Map<const Eigen::VectorXd>(c_.data(), nv);
    p.Aeq.resize(na, nv);
    p.Aeq.setFromTriplets(a.begin(), a.end());
    p.beq = Eigen::Map<const Eigen::VectorXd>(beq_.data(), na);
    p.G.resize(ng, nv);
    p.G.setFromTriplets(g.begin(), g.end());
    p.gl = Eigen::Map<const Eigen::VectorXd>(gl_.data(), ng);
    p.gu = Eigen::Map<const Eigen::VectorXd>(gu_.data(), ng);
    p.lb = Eigen::Map<const Eigen::VectorXd>(lb_.data(), nv);
    p.ub = Eigen::Map<const Eigen::VectorXd>(ub_.data(), nv);
    return p;
  }
};

double conjugate_norm(const Eigen::VectorXd& g, double p) {
  if (std::isinf(p)) return g.cwiseAbs().sum();  // p' = 1
  if (p == 1.0) return g.cwiseAbs().maxCoeff();  // p' = inf
  return g.norm();
}

Eigen::VectorXd lp_norm_slopes(const Eigen::VectorXd& beta, double p, double& out) {
  if (std::isinf(p)) out = beta.cwiseAbs().maxCoeff();
  else if (p == 1.0) out = beta.cwiseAbs().sum();
  else out = beta.norm();
  return beta;
}

GomSolution subset_solution(const Dataset& ds, const BalanceMetric& metric,
                            const SubsetResult& res, double lambda, WeightSpace space,
                            std::map<std::string, double> diag = {}, std::string note = "") {
  require(!res.subset.empty(), Errc::infeasible, "subset search returned no candidate");
  const int s = static_cast<int>(res.subset.size());
  Eigen::VectorXd w = Eigen::VectorXd::Zero(ds.n0());
  for (int idx : res.subset) w[idx] = 1.0 / s;
  diag["subset_exact"] = res.exact ? 1.0 : 0.0;
  diag["subset_evaluated"] = static_cast<double>(res.evaluated);
  if (!res.exact && note.empty())
    note = "subset search exceeded its exact limits; best candidate found is reported";
  return finalize(ds, metric, weights_of(std::move(w), space, 1.0, s), lambda, std::move(diag),
                  std::move(note));
}

// Minimum-imbalance weights in the lambda = infinity limit: the minimum-norm
// element of the space first, imbalance as tie-break (free-size subsets use the
// full control set; fixed-cardinality spaces reduce to an imbalance-only search).
GomSolution lambda_inf_solution(const Dataset& ds, const GomSpec& spec);

// ---------------------------------------------------------------------------
// Simplex-family quadratic programs over the weights alone.

GomSolution simplex_quadratic(const Dataset& ds, const BalanceMetric& metric,
                              const Eigen::MatrixXd& H, const Eigen::VectorXd& lin, double lambda,
                              WeightSpace space, double cap, const char* what) {
  const int n0 = ds.n0();
  require(cap * n0 >= 1.0 - 1e-12, Errc::infeasible,
          std::string(what) + ": cap infeasible (b * n0 < 1)");
  QpProblem p;
  p.init(n0);
  Eigen::MatrixXd Q = 2.0 * H;
  if (std::isfinite(lambda) && lambda > 0.0) Q.diagonal().array() += 2.0 * lambda;
  p.set_Q_dense(Q);
  p.c = lin;
  p.simplex = true;
  if (space == WeightSpace::b_simplex) p.ub = Eigen::VectorXd::Constant(n0, cap);
  const QpSolution qs = solve_qp(p);
  Eigen::VectorXd w = qs.x;
  snap_simplex(w, space == WeightSpace::b_simplex ? cap : 1.0);
  std::map<std::string, double> diag;
  merge_qp_diag(diag, qs);
  return finalize(ds, metric, weights_of(std::move(w), space, cap, 0), lambda, std::move(diag));
}

// ---------------------------------------------------------------------------
// Affine-gap solvers: imbalance = norm(target - M w), shared by the coarsened
// and linear metrics. V weights the l2 case; p selects the conjugate norm.

GomSolution quadratic_gap(const Dataset& ds, const BalanceMetric& metric,
                          const Eigen::MatrixXd& M, const Eigen::VectorXd& target,
                          const Eigen::MatrixXd& V, double lambda, WeightSpace space, double cap) {
  const Eigen::MatrixXd MV = V.size() ? Eigen::MatrixXd(M.transpose() * V) : M.transpose();
  const Eigen::MatrixXd H = MV * M;                  // M' V M
  const Eigen::VectorXd h = MV * target;             // M' V target
  if (space == WeightSpace::general) {
    Eigen::MatrixXd A = H;
    Eigen::VectorXd w;
    if (lambda > 0.0) {
      A.diagonal().array() += lambda;
      w = A.ldlt().solve(h);
    } else {
      w = pinv_sym(A) * h;  // minimum-norm stationary point
    }
    return finalize(ds, metric, weights_of(std::move(w), WeightSpace::general, 1.0, 0), lambda);
  }
  if (space == WeightSpace::simplex || space == WeightSpace::b_simplex)
    return simplex_quadratic(ds, metric, H, Eigen::VectorXd(-2.0 * h), lambda, space, cap,
                             "quadratic balance");
  // Uniform-subset search: f(S) = c0 + mean of linear terms + mean-pair quadratic.
  fail(Errc::unsupported, "quadratic gap: unsupported weight space");
}

GomSolution quadratic_gap_subset(const Dataset& ds, const BalanceMetric& metric,
                                 const Eigen::MatrixXd& M, const Eigen::VectorXd& target,
                                 const Eigen::MatrixXd& V, double lambda, int subset_size,
                                 WeightSpace space) {
  const Eigen::MatrixXd MV = V.size() ? Eigen::MatrixXd(M.transpose() * V) : M.transpose();
  Eigen::MatrixXd Q = MV * M;
  if (lambda > 0.0) Q.diagonal().array() += lambda;  // lambda ||w||^2 = lambda / |S|
  const Eigen::VectorXd b = -2.0 * (MV * target);
  const double c0 = V.size() ? target.dot(V * target) : target.squaredNorm();
  SubsetOptions so;
  if (subset_size > 0) so.min_size = so.max_size = subset_size;
  const SubsetResult res = subset_search_quadratic(Q, b, c0, so);
  return subset_solution(ds, metric, res, lambda, space);
}

// Epigraph program for conjugate-norm gaps (p' = 1 or inf) over simplex-family
// or general weights.
GomSolution epigraph_gap(const Dataset& ds, const BalanceMetric& metric, const Eigen::MatrixXd& M,
                         const Eigen::VectorXd& target, double p, double lambda, WeightSpace space,
                         double cap) {
  const int n0 = ds.n0();
  const int k = static_cast<int>(target.size());
  const bool general = space == WeightSpace::general;
  if (general && lambda == 0.0) {
    // Any norm is minimized by an exact-balance solution when one exists.
    Eigen::VectorXd w = M.completeOrthogonalDecomposition().solve(target);
    if ((M * w - target).cwiseAbs().maxCoeff() <= 1e-10 * std::max(1.0, target.cwiseAbs().maxCoeff()))
      return finalize(ds, metric, weights_of(std::move(w), WeightSpace::general, 1.0, 0), lambda,
                      {}, "exact balance attained by the minimum-norm solution");
  }
  QpBuild B;
  const double wlo = general ? -kInf : 0.0;
  const double whi = (space == WeightSpace::b_simplex) ? cap : kInf;
  std::vector<int> wv(n0);
  for (int i = 0; i < n0; ++i)
    wv[i] = B.var(wlo, whi, (std::isfinite(lambda) && lambda > 0.0) ? 2.0 * lambda : 0.0, 0.0);
  if (!general) {
    const int r = B.eq(1.0);
    for (int i = 0; i < n0; ++i) B.eqc(r, wv[i], 1.0);
  }
  auto gap_rows = [&](int tvar, int j) {
    // target_j - M_j w <= t  and  M_j w - target_j <= t
    const int r1 = B.row(-kInf, -target[j]);
    B.rowc(r1, tvar, -1.0);
    const int r2 = B.row(-kInf, target[j]);
    B.rowc(r2, tvar, -1.0);
    for (int i = 0; i < n0; ++i) {
      const double m = M(j, i);
      if (m != 0.0) {
        B.rowc(r1, wv[i], -m);
        B.rowc(r2, wv[i], m);
      }
    }
  };
  if (p == 1.0) {  // p' = inf: single bound on the max gap
    const int t = B.var(0.0, kInf, 2.0, 0.0);
    for (int j = 0; j < k; ++j) gap_rows(t, j);
  } else {  // p = inf, p' = 1: sum of per-coordinate bounds
    std::vector<int> tv(k);
    for (int j = 0; j < k; ++j) {
      tv[j] = B.var(0.0, kInf, 0.0, 0.0);
      gap_rows(tv[j], j);
    }
    const int s = B.var(0.0, kInf, 2.0, 0.0);
    const int r = B.eq(0.0);
    B.eqc(r, s, 1.0);
    for (int j = 0; j < k; ++j) B.eqc(r, tv[j], -1.0);
  }
  const QpSolution qs = solve_qp(B.build());
  Eigen::VectorXd w = qs.x.head(n0);
  if (!general) snap_simplex(w, space == WeightSpace::b_simplex ? cap : 1.0);
  std::map<std::string, double> diag;
  merge_qp_diag(diag, qs);
  return finalize(ds, metric, weights_of(std::move(w), space, cap, 0), lambda, std::move(diag));
}

// Stratum indicator matrix (J x n0) and per-stratum treated shares.
void coarsen_system(const Dataset& ds, const CoarsenResult& cr, Eigen::MatrixXd& M,
                    Eigen::VectorXd& target) {
  const int n0 = ds.n0();
  M = Eigen::MatrixXd::Zero(cr.J, n0);
  for (int kdx = 0; kdx < n0; ++kdx) M(cr.label[ds.controls[kdx]], kdx) = 1.0;
  target.resize(cr.J);
  for (int j = 0; j < cr.J; ++j) target[j] = static_cast<double>(cr.n1j[j]) / ds.n1();
}

// Mean-gap system for the linear metrics; general space prepends the constant
// coordinate so the intercept discrepancy 1 - sum w is penalized too.
void linear_system(const Dataset& ds, bool with_intercept, Eigen::MatrixXd& M,
                   Eigen::VectorXd& target) {
  const Eigen::MatrixXd X0 = ds.x_controls();
  const Eigen::RowVectorXd mean1 = ds.x_treated().colwise().mean();
  if (with_intercept) {
    M.resize(ds.d() + 1, ds.n0());
    M.row(0).setOnes();
    M.bottomRows(ds.d()) = X0.transpose();
    target.resize(ds.d() + 1);
    target[0] = 1.0;
    target.tail(ds.d()) = mean1.transpose();
  } else {
    M = X0.transpose();
    target = mean1.transpose();
  }
}

// ---------------------------------------------------------------------------
// Lipschitz regression (the cross-validation engine behind nnm_pp).

struct LipFit {
  Eigen::VectorXd v;
  double gamma = 0.0;
};

LipFit lipschitz_fit(const Eigen::MatrixXd& D, const Eigen::VectorXd& y, double psi,
                     bool normalized) {
  const int m = static_cast<int>(y.size());
  if (std::isinf(psi)) return {Eigen::VectorXd::Constant(m, y.mean()), 0.0};
  QpBuild B;
  const double s = normalized ? 1.0 / m : 1.0;
  std::vector<int> vv(m);
  for (int i = 0; i < m; ++i) vv[i] = B.var(-kInf, kInf, 2.0 * s, -2.0 * s * y[i]);
  const int gv = B.var(0.0, kInf, 0.0, psi);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      if (i == j) continue;
      const int r = B.row(-kInf, 0.0);  // v_i - v_j - gamma D_ij <= 0
      B.rowc(r, vv[i], 1.0);
      B.rowc(r, vv[j], -1.0);
      B.rowc(r, gv, -D(i, j));
    }
  }
  const QpSolution qs = solve_qp(B.build());
  return {qs.x.head(m), std::max(0.0, qs.x[m])};
}

Eigen::VectorXd lipschitz_predict(const LipFit& fit, const Eigen::MatrixXd& Dcross) {
  const int h = static_cast<int>(Dcross.rows());
  Eigen::VectorXd out(h);
  for (int i = 0; i < h; ++i) {
    double lo = -kInf, hi = kInf;
    for (int j = 0; j < Dcross.cols(); ++j) {
      hi = std::min(hi, fit.v[j] + fit.gamma * Dcross(i, j));
      lo = std::max(lo, fit.v[j] - fit.gamma * Dcross(i, j));
    }
    out[i] = 0.5 * (lo + hi);
  }
  return out;
}

// Pure transportation solve: minimize the Lipschitz imbalance over the capped
// simplex at lambda = 0 by routing each treated unit's mass through a dummy
// source that absorbs unused control capacity.
Eigen::VectorXd capped_transport_weights(const Eigen::MatrixXd& D, double cap) {
  const int n1 = static_cast<int>(D.rows());
  const int n0 = static_cast<int>(D.cols());
  require(cap * n0 >= 1.0 - 1e-12, Errc::infeasible, "cap infeasible: b * n0 < 1");
  FlowProblem fp;
  fp.supply.resize(n1 + 1);
  fp.supply.head(n1).setConstant(1.0 / n1);
  fp.supply[n1] = cap * n0 - 1.0;
  fp.demand = Eigen::VectorXd::Constant(n0, cap);
  fp.cost = Eigen::MatrixXd::Zero(n1 + 1, n0);
  fp.cost.topRows(n1) = D;
  const FlowSolution fs = solve_transport(fp);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n0);
  for (const auto& arc : fs.arcs)
    if (arc.i < n1) w[arc.j] += arc.flow;
  return w;
}

double clamp_lambda_hat(double sigma2, double gamma) {
  const double l = sigma2 / std::max(gamma * gamma, 1e-12);
  if (!(l >= 0.0)) fail(Errc::numeric, "tuned lambda is not a number");
  return l >= 1e12 ? kInf : l;
}

}  // namespace

// ---------------------------------------------------------------------------
// Canonical ordering: every public solver runs on a data-determined row order
// and maps the weights back, so permuting input rows permutes the output
// weights exactly. Stable sorting keeps exact-duplicate rows exchangeable.

CanonicalView canonical_view(const Dataset& ds) {
  const int n = ds.n();
  const bool has_y = ds.has_outcome();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto before = [&](int a, int b) {
    if (ds.T[a] != ds.T[b]) return ds.T[a] > ds.T[b];
    for (int k = 0; k < ds.d(); ++k)
      if (ds.X(a, k) != ds.X(b, k)) return ds.X(a, k) < ds.X(b, k);
    if (has_y && ds.Y[a] != ds.Y[b]) return ds.Y[a] < ds.Y[b];
    return false;
  };
  std::stable_sort(order.begin(), order.end(), before);

  CanonicalView cv;
  cv.to_original = order;
  cv.identity = std::is_sorted(order.begin(), order.end());
  if (cv.identity) {
    cv.control_slot.resize(ds.n0());
    std::iota(cv.control_slot.begin(), cv.control_slot.end(), 0);
    return cv;
  }

  cv.ds.X.resize(n, ds.d());
  cv.ds.T.resize(n);
  if (has_y) cv.ds.Y.resize(n);
  cv.ds.col_names = ds.col_names;
  cv.ds.true_f0 = ds.true_f0;
  cv.ds.true_sigma2 = ds.true_sigma2;
  for (int i = 0; i < n; ++i) {
    cv.ds.X.row(i) = ds.X.row(order[i]);
    cv.ds.T[i] = ds.T[order[i]];
    if (has_y) cv.ds.Y[i] = ds.Y[order[i]];
  }
  cv.ds.reindex();

  std::vector<int> orig_pos_of_row(n, -1);
  for (int p = 0; p < ds.n0(); ++p) orig_pos_of_row[ds.controls[p]] = p;
  cv.control_slot.assign(ds.n0(), -1);
  for (int j = 0; j < cv.ds.n0(); ++j)
    cv.control_slot[orig_pos_of_row[order[cv.ds.controls[j]]]] = j;
  return cv;
}

Eigen::VectorXd weights_to_input_order(const CanonicalView& cv, const Eigen::VectorXd& w_canon) {
  if (cv.identity) return w_canon;
  Eigen::VectorXd out(w_canon.size());
  for (int p = 0; p < out.size(); ++p) out[p] = w_canon[cv.control_slot[p]];
  return out;
}

namespace {

// Precomputed distance matrices are indexed by row, so they ride along with
// the reordering; everything else in a metric is row-order free.
MetricSpec permute_distance(const MetricSpec& d, const std::vector<int>& order) {
  if (d.kind != DistanceKind::precomputed) return d;
  const int n = static_cast<int>(order.size());
  require(d.precomputed.rows() == n && d.precomputed.cols() == n, Errc::dimension,
          "precomputed distance matrix must cover all units");
  MetricSpec out = d;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out.precomputed(i, j) = d.precomputed(order[i], order[j]);
  return out;
}

BalanceMetric permute_metric(const BalanceMetric& m, const std::vector<int>& order) {
  BalanceMetric out = m;
  out.distance = permute_distance(m.distance, order);
  if (m.kind == MetricKind::mixed) {
    if (m.mix_a) out.mix_a = std::make_shared<BalanceMetric>(permute_metric(*m.mix_a, order));
    if (m.mix_b) out.mix_b = std::make_shared<BalanceMetric>(permute_metric(*m.mix_b, order));
  }
  return out;
}

template <class Solve>
GomSolution with_canonical(const Dataset& ds, Solve&& solve) {
  CanonicalView cv = canonical_view(ds);
  if (cv.identity) return solve(ds, cv);
  GomSolution sol = solve(cv.ds, cv);
  sol.weights.w = weights_to_input_order(cv, sol.weights.w);
  return sol;
}

}  // namespace

// ---------------------------------------------------------------------------

static GomSolution nnm_direct(const Dataset& ds, const MetricSpec& metric) {
  const Eigen::MatrixXd D = distance_matrix(ds, metric);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(ds.n0());
  for (int i = 0; i < ds.n1(); ++i) {
    int best = 0;
    for (int j = 1; j < ds.n0(); ++j)
      if (D(i, j) < D(i, best)) best = j;
    w[best] += 1.0 / ds.n1();
  }
  return finalize(ds, BalanceMetric::make_lipschitz(metric),
                  weights_of(std::move(w), WeightSpace::simplex, 1.0, 0), 0.0, {},
                  "per-treated nearest control, ties to the lowest index");
}

static GomSolution one_to_one_direct(const Dataset& ds, const MetricSpec& metric) {
  require(ds.n0() >= ds.n1(), Errc::infeasible, "1:1 matching needs n0 >= n1");
  const Eigen::MatrixXd D = distance_matrix(ds, metric);
  const AssignSolution as = solve_assignment(D, true);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(ds.n0());
  for (int i = 0; i < ds.n1(); ++i) w[as.match[i]] = 1.0 / ds.n1();
  return finalize(ds, BalanceMetric::make_lipschitz(metric),
                  weights_of(std::move(w), WeightSpace::b_simplex, 1.0 / ds.n1(), 0), 0.0, {},
                  "optimal pair matching without replacement");
}

static GomSolution bvennm_direct(const Dataset& ds, const MetricSpec& metric, double lambda, double cap) {
  require(lambda >= 0.0, Errc::invalid_argument, "lambda must be nonnegative");
  const BalanceMetric bm = BalanceMetric::make_lipschitz(metric);
  if (std::isinf(lambda)) {
    GomSpec spec;
    spec.space = cap < 1.0 ? WeightSpace::b_simplex : WeightSpace::simplex;
    spec.b = cap;
    spec.metric = bm;
    spec.lambda = lambda;
    return solve_gom(ds, spec);
  }
  const Eigen::MatrixXd D = distance_matrix(ds, metric);
  const int n1 = ds.n1(), n0 = ds.n0();
  if (lambda == 0.0) {
    Eigen::VectorXd w = capped_transport_weights(D, std::min(cap, 1.0));
    const WeightSpace sp = cap < 1.0 ? WeightSpace::b_simplex : WeightSpace::simplex;
    return finalize(ds, bm, weights_of(std::move(w), sp, cap, 0), 0.0);
  }
  // Joint program over weights and the transport plan: the imbalance equals the
  // optimal flow cost, so the epigraph scalar rides on explicit flow variables.
  QpBuild B;
  std::vector<int> wv(n0);
  for (int j = 0; j < n0; ++j) wv[j] = B.var(0.0, cap < 1.0 ? cap : kInf, 2.0 * lambda, 0.0);
  std::vector<int> fv(static_cast<size_t>(n1) * n0);
  for (int i = 0; i < n1; ++i)
    for (int j = 0; j < n0; ++j) fv[static_cast<size_t>(i) * n0 + j] = B.var(0.0, kInf, 0.0, 0.0);
  const int tv = B.var(0.0, kInf, 2.0, 0.0);
  for (int i = 0; i < n1; ++i) {
    const int r = B.eq(1.0 / n1);
    for (int j = 0; j < n0; ++j) B.eqc(r, fv[static_cast<size_t>(i) * n0 + j], 1.0);
  }
  for (int j = 0; j < n0; ++j) {
    const int r = B.eq(0.0);
    for (int i = 0; i < n1; ++i) B.eqc(r, fv[static_cast<size_t>(i) * n0 + j], 1.0);
    B.eqc(r, wv[j], -1.0);
  }
  const int rc = B.eq(0.0);
  B.eqc(rc, tv, -1.0);
  for (int i = 0; i < n1; ++i)
    for (int j = 0; j < n0; ++j)
      if (D(i, j) != 0.0) B.eqc(rc, fv[static_cast<size_t>(i) * n0 + j], D(i, j));
  const QpSolution qs = solve_qp(B.build());
  Eigen::VectorXd w = qs.x.head(n0);
  snap_simplex(w, std::min(cap, 1.0));
  std::map<std::string, double> diag;
  merge_qp_diag(diag, qs);
  const WeightSpace sp = cap < 1.0 ? WeightSpace::b_simplex : WeightSpace::simplex;
  return finalize(ds, bm, weights_of(std::move(w), sp, cap, 0), lambda, std::move(diag));
}

static GomSolution nnm_pp_direct(const Dataset& ds, const MetricSpec& metric, const NnmPpOptions& opts) {
  require(ds.has_outcome(), Errc::invalid_argument, "outcome data required for tuning");
  const int n0 = ds.n0();
  require(n0 >= 4, Errc::invalid_argument, "too few controls for cross-validated tuning");
  const Eigen::MatrixXd D0 = distance_matrix(ds, metric, ds.controls, ds.controls);
  const Eigen::VectorXd y0 = ds.y_controls();
  std::vector<double> grid = opts.psi_grid;
  if (grid.empty()) grid = {0.1, 1.0, 10.0, 100.0, 1000.0, kInf};
  int k = std::max(2, std::min(opts.folds, n0 / 2));  // every fold needs >= 2 points
  std::vector<std::vector<int>> folds(k);
  {
    Rng rng(opts.seed);
    const std::vector<int> perm = rng.permutation(n0);
    for (int i = 0; i < n0; ++i) folds[i % k].push_back(perm[i]);
  }
  auto slice = [&](const std::vector<int>& rows, const std::vector<int>& cols) {
    Eigen::MatrixXd out(rows.size(), cols.size());
    for (size_t a = 0; a < rows.size(); ++a)
      for (size_t b2 = 0; b2 < cols.size(); ++b2) out(a, b2) = D0(rows[a], cols[b2]);
    return out;
  };
  double best_score = kInf, psi_hat = grid.front();
  for (double psi : grid) {
    double acc = 0.0;
    for (int f = 0; f < k; ++f) {
      std::vector<int> fit_idx;
      for (int g = 0; g < k; ++g)
        if (g != f) fit_idx.insert(fit_idx.end(), folds[g].begin(), folds[g].end());
      Eigen::VectorXd yfit(fit_idx.size());
      for (size_t a = 0; a < fit_idx.size(); ++a) yfit[a] = y0[fit_idx[a]];
      const LipFit fit = lipschitz_fit(slice(fit_idx, fit_idx), yfit, psi, false);
      const Eigen::VectorXd pred = lipschitz_predict(fit, slice(folds[f], fit_idx));
      double sse = 0.0;
      for (size_t a = 0; a < folds[f].size(); ++a) {
        const double e = y0[folds[f][a]] - pred[a];
        sse += e * e;
      }
      acc += sse / (static_cast<double>(folds[f].size()) - 1.0);
    }
    const double score = acc / k;
    if (score < best_score) {
      best_score = score;
      psi_hat = psi;
    }
  }
  const double sigma2_hat = best_score;
  const LipFit refit = lipschitz_fit(D0, y0, psi_hat, true);
  const double gamma_hat = refit.gamma;
  const double lambda_hat = clamp_lambda_hat(sigma2_hat, gamma_hat);
  std::map<std::string, double> diag{{"psi_hat", psi_hat},
                                     {"gamma_hat", gamma_hat},
                                     {"sigma2_hat", sigma2_hat},
                                     {"lambda_hat", lambda_hat},
                                     {"cv_folds", static_cast<double>(k)}};
  GomSolution sol = bvennm(ds, metric, lambda_hat);
  for (const auto& kv : diag) sol.diag[kv.first] = kv.second;
  return sol;
}

static GomSolution ocm_direct(const Dataset& ds, const MetricSpec& metric, bool replacement) {
  const Eigen::MatrixXd D = distance_matrix(ds, metric);
  const BalanceMetric bm = BalanceMetric::make_caliper(metric);
  if (replacement) {
    const BottleneckSolution bs = solve_bottleneck(D, false);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(ds.n0());
    for (int i = 0; i < ds.n1(); ++i) w[bs.match[i]] += 1.0 / ds.n1();
    return finalize(ds, bm, weights_of(std::move(w), WeightSpace::simplex, 1.0, 0), 0.0, {},
                    "caliper matching with replacement");
  }
  require(ds.n0() >= ds.n1(), Errc::infeasible, "matching without replacement needs n0 >= n1");
  const BottleneckSolution bs = solve_bottleneck(D, true);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(ds.n0());
  for (int i = 0; i < ds.n1(); ++i) w[bs.match[i]] = 1.0 / ds.n1();
  return finalize(ds, bm, weights_of(std::move(w), WeightSpace::b_simplex, 1.0 / ds.n1(), 0), 0.0,
                  {}, "caliper matching without replacement");
}

static GomSolution cem_direct(const Dataset& ds, const CoarseningSpec& c, bool prune_unmatched) {
  const CoarsenResult cr = coarsen(ds, c);
  const int n0 = ds.n0(), n1 = ds.n1();
  double unmatched = 0.0;
  for (int j = 0; j < cr.J; ++j)
    if (cr.n0j[j] == 0) unmatched += static_cast<double>(cr.n1j[j]) / n1;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n0);
  const double renorm = prune_unmatched ? 1.0 - unmatched : 1.0;
  require(renorm > 1e-12, Errc::infeasible, "no treated stratum has matching controls");
  for (int kdx = 0; kdx < n0; ++kdx) {
    const int j = cr.label[ds.controls[kdx]];
    if (cr.n1j[j] > 0)
      w[kdx] = static_cast<double>(cr.n1j[j]) / (n1 * renorm * cr.n0j[j]);
  }
  const BalanceMetric bm = BalanceMetric::make_coarsened(c, kInf);
  std::map<std::string, double> diag{{"strata", static_cast<double>(cr.J)},
                                     {"unmatched_treated_mass", unmatched}};
  if (unmatched > 1e-15 && !prune_unmatched)
    return finalize(ds, bm, weights_of(std::move(w), WeightSpace::general, 1.0, 0), 0.0,
                    std::move(diag),
                    "treated strata without controls keep their mass deficit; weights sum to "
                    "1 - unmatched share");
  std::string note = prune_unmatched && unmatched > 1e-15
                         ? "unmatched treated strata pruned; the estimand is restricted to "
                           "matched treated units"
                         : "";
  return finalize(ds, bm, weights_of(std::move(w), WeightSpace::simplex, 1.0, 0), 0.0,
                  std::move(diag), std::move(note));
}

static GomSolution bvecem_direct(const Dataset& ds, const CoarseningSpec& c, double lambda) {
  require(lambda >= 0.0, Errc::invalid_argument, "lambda must be nonnegative");
  const BalanceMetric bm = BalanceMetric::make_coarsened(c, kInf);
  if (std::isinf(lambda)) {
    GomSpec spec;
    spec.metric = bm;
    spec.lambda = lambda;
    return solve_gom(ds, spec);
  }
  const CoarsenResult cr = coarsen(ds, c);
  const int n1 = ds.n1(), n0 = ds.n0();
  // Strata with controls, sorted by treated share per control (descending).
  struct Stratum {
    double q;      // n1j / (n1 n0j)
    double share;  // n1j / n1
    double n0j;
    int id;
  };
  std::vector<Stratum> st;
  double c0 = 0.0;
  for (int j = 0; j < cr.J; ++j) {
    if (cr.n0j[j] == 0) {
      c0 += static_cast<double>(cr.n1j[j]) / n1;
      continue;
    }
    Stratum s;
    s.share = static_cast<double>(cr.n1j[j]) / n1;
    s.n0j = cr.n0j[j];
    s.q = s.share / s.n0j;
    s.id = j;
    st.push_back(s);
  }
  const int J = static_cast<int>(st.size());
  require(J > 0, Errc::infeasible, "no stratum contains controls");
  std::sort(st.begin(), st.end(), [](const Stratum& a, const Stratum& b) { return a.q > b.q; });
  // Prefix sums in sorted order for O(1) pattern evaluation.
  std::vector<double> pn0(J + 1, 0.0), pr(J + 1, 0.0), pq2(J + 1, 0.0);
  for (int j = 0; j < J; ++j) {
    pn0[j + 1] = pn0[j] + st[j].n0j;
    pr[j + 1] = pr[j] + st[j].share;
    pq2[j + 1] = pq2[j] + st[j].n0j * st[j].q * st[j].q;
  }
  const double total_r = pr[J];  // = 1 - c0
  double best_obj = kInf;
  int best_jp = -1, best_jm = -1;
  double best_wp = 0.0, best_wm = 0.0;
  const double tol = 1e-12;
  for (int jp = 0; jp <= J; ++jp) {
    for (int jm = 0; jm + jp <= J; ++jm) {
      const double n0p = pn0[jp] - pn0[0];
      const double n0m = pn0[J] - pn0[J - jm];
      const double rp = pr[jp];
      const double rm = pr[J] - pr[J - jm];
      const double r = total_r - rp - rm;
      const double rd = rp - rm;
      double wp = 0.0, wm = 0.0;
      if (jp == 0 && jm == 0) {
        if (std::abs(1.0 - r) > 1e-9) continue;  // proportional weights must carry all mass
      } else {
        const double denom = 4.0 * n0p * n0m + lambda * (n0p + n0m);
        if (denom <= 0.0) {
          // lambda == 0 with one side empty: mass pins the active side.
          if (jp == 0 && n0m > 0.0) wm = (1.0 - r) / n0m;
          else if (jm == 0 && n0p > 0.0) wp = (1.0 - r) / n0p;
          else continue;
        } else {
          wp = (2.0 * n0m * (1.0 - r + rd + c0) + lambda * (1.0 - r)) / denom;
          wm = (2.0 * n0p * (1.0 - r - rd - c0) + lambda * (1.0 - r)) / denom;
        }
      }
      // Sign feasibility keeps the closed-form imbalance exact.
      if (jp > 0 && (wp < -tol || st[jp - 1].q < wp - tol)) continue;
      if (jm > 0 && (wm < -tol || st[J - jm].q > wm + tol)) continue;
      wp = std::max(wp, 0.0);
      wm = std::max(wm, 0.0);
      const double imb = (rp - n0p * wp) + (n0m * wm - rm) + c0;
      const double mid_q2 = pq2[J - jm] - pq2[jp];
      const double l2 = n0p * wp * wp + n0m * wm * wm + mid_q2;
      const double obj = imb * imb + lambda * l2;
      if (obj < best_obj - 1e-15) {
        best_obj = obj;
        best_jp = jp;
        best_jm = jm;
        best_wp = wp;
        best_wm = wm;
      }
    }
  }
  // Per-stratum weight in sorted order for the winning pattern.
  auto pattern_weights = [&](int jp, int jm, double wp, double wm) {
    std::vector<double> u(J);
    for (int j = 0; j < J; ++j)
      u[j] = j < jp ? wp : (j >= J - jm ? wm : st[j].q);
    return u;
  };
  std::vector<double> u_best;
  if (best_jp >= 0) u_best = pattern_weights(best_jp, best_jm, best_wp, best_wm);
  std::map<std::string, double> diag{{"strata", static_cast<double>(cr.J)},
                                     {"uncontrolled_treated_mass", c0}};
  bool qp_used = false;
  if (J <= 2000) {
    // Independent stratum-level program as arbiter for degenerate patterns.
    QpBuild B;
    std::vector<int> uv(J), tv(J);
    for (int j = 0; j < J; ++j) uv[j] = B.var(0.0, kInf, 2.0 * lambda * st[j].n0j, 0.0);
    for (int j = 0; j < J; ++j) tv[j] = B.var(0.0, kInf, 0.0, 0.0);
    const int sv = B.var(0.0, kInf, 2.0, 0.0);
    const int rmass = B.eq(1.0);
    for (int j = 0; j < J; ++j) B.eqc(rmass, uv[j], st[j].n0j);
    const int rsum = B.eq(c0);  // s = sum t + c0
    B.eqc(rsum, sv, 1.0);
    for (int j = 0; j < J; ++j) B.eqc(rsum, tv[j], -1.0);
    for (int j = 0; j < J; ++j) {
      const int r1 = B.row(-kInf, st[j].share);  // n0j u - t <= share... sign per direction
      B.rowc(r1, uv[j], st[j].n0j);
      B.rowc(r1, tv[j], -1.0);
      const int r2 = B.row(-kInf, -st[j].share);
      B.rowc(r2, uv[j], -st[j].n0j);
      B.rowc(r2, tv[j], -1.0);
    }
    const QpSolution qs = solve_qp(B.build());
    std::vector<double> u_qp(J);
    double mass = 0.0;
    for (int j = 0; j < J; ++j) {
      u_qp[j] = std::max(0.0, qs.x[uv[j]]);
      mass += u_qp[j] * st[j].n0j;
    }
    if (mass > 0.5) {
      for (auto& x : u_qp) x /= mass;
      double imb = c0, l2 = 0.0;
      for (int j = 0; j < J; ++j) {
        imb += std::abs(st[j].share - st[j].n0j * u_qp[j]);
        l2 += st[j].n0j * u_qp[j] * u_qp[j];
      }
      const double obj = imb * imb + lambda * l2;
      if (obj < best_obj - 1e-10 * std::max(1.0, std::abs(best_obj)) || best_jp < 0) {
        best_obj = obj;
        u_best = u_qp;
        qp_used = true;
      }
    }
    merge_qp_diag(diag, qs);
  }
  require(!u_best.empty(), Errc::numeric, "no feasible two-threshold pattern found");
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n0);
  std::vector<double> per_stratum(cr.J, 0.0);
  for (int j = 0; j < J; ++j) per_stratum[st[j].id] = u_best[j];
  for (int kdx = 0; kdx < n0; ++kdx) w[kdx] = per_stratum[cr.label[ds.controls[kdx]]];
  snap_simplex(w, 1.0);
  diag["pattern_top"] = best_jp;
  diag["pattern_bottom"] = best_jm;
  diag["qp_refined"] = qp_used ? 1.0 : 0.0;
  return finalize(ds, bm, weights_of(std::move(w), WeightSpace::simplex, 1.0, 0), lambda,
                  std::move(diag));
}

static GomSolution cem_pp_direct(const Dataset& ds, const CoarseningSpec& c) {
  require(ds.has_outcome(), Errc::invalid_argument, "outcome data required for tuning");
  const CoarsenResult cr = coarsen(ds, c);
  const int n0 = ds.n0();
  // Stratum means over the controls.
  std::vector<double> mu(cr.J, 0.0);
  std::vector<int> cnt(cr.J, 0);
  const Eigen::VectorXd y0 = ds.y_controls();
  for (int kdx = 0; kdx < n0; ++kdx) {
    const int j = cr.label[ds.controls[kdx]];
    mu[j] += y0[kdx];
    cnt[j] += 1;
  }
  int j0 = 0;
  for (int j = 0; j < cr.J; ++j)
    if (cnt[j] > 0) {
      mu[j] /= cnt[j];
      ++j0;
    }
  const int dof = n0 - j0;
  require(dof > 0, Errc::invalid_argument,
          "coarsening leaves no residual degrees of freedom among controls");
  double rss = 0.0;
  for (int kdx = 0; kdx < n0; ++kdx) {
    const double e = y0[kdx] - mu[cr.label[ds.controls[kdx]]];
    rss += e * e;
  }
  const double sigma2 = rss / dof;
  const double thresh = sigma2 * (1.0 + std::sqrt(2.0 / dof));
  double mu_lo = kInf, mu_hi = -kInf;
  for (int j = 0; j < cr.J; ++j)
    if (cnt[j] > 0) {
      mu_lo = std::min(mu_lo, mu[j]);
      mu_hi = std::max(mu_hi, mu[j]);
    }
  // Squeezed-range residual criterion; inner minimum over the center is convex.
  auto crit = [&](double gamma) {
    auto rss_at = [&](double cc) {
      double s = 0.0;
      for (int kdx = 0; kdx < n0; ++kdx) {
        const double m = mu[cr.label[ds.controls[kdx]]];
        const double v = std::min(std::max(m, cc - gamma), cc + gamma);
        const double e = y0[kdx] - v;
        s += e * e;
      }
      return s;
    };
    double lo = mu_lo - gamma, hi = mu_hi + gamma;
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
    double f1 = rss_at(x1), f2 = rss_at(x2);
    for (int it = 0; it < 200 && hi - lo > 1e-12 * std::max(1.0, std::abs(hi) + std::abs(lo));
         ++it) {
      if (f1 <= f2) {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - gr * (hi - lo);
        f1 = rss_at(x1);
      } else {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + gr * (hi - lo);
        f2 = rss_at(x2);
      }
    }
    return std::min(f1, f2) / dof;
  };
  double gamma_hat = 0.0;
  if (crit(0.0) > thresh) {
    double lo = 0.0, hi = 0.5 * (mu_hi - mu_lo);
    if (crit(hi) > thresh) hi = mu_hi - mu_lo;  // safety margin; guaranteed at full spread
    for (int it = 0; it < 100 && hi - lo > 1e-8 * std::max(1.0, hi); ++it) {
      const double mid = 0.5 * (lo + hi);
      (crit(mid) > thresh ? lo : hi) = mid;
    }
    gamma_hat = hi;
  }
  const double lambda_hat = clamp_lambda_hat(sigma2, gamma_hat);
  std::map<std::string, double> diag{{"gamma_hat", gamma_hat},
                                     {"sigma2_hat", sigma2},
                                     {"lambda_hat", lambda_hat},
                                     {"residual_dof", static_cast<double>(dof)}};
  GomSolution sol = bvecem(ds, c, lambda_hat);
  for (const auto& kv : diag) sol.diag[kv.first] = kv.second;
  return sol;
}

static GomSolution omm_direct(const Dataset& ds, const Eigen::MatrixXd& V, double lambda,
                const SubsetMethodOptions& opts) {
  require(lambda >= 0.0, Errc::invalid_argument, "lambda must be nonnegative");
  const Eigen::MatrixXd Vm = V.size() ? V : Eigen::MatrixXd::Identity(ds.d(), ds.d());
  const BalanceMetric bm = BalanceMetric::make_linear_l2(Vm);
  if (std::isinf(lambda)) {
    GomSpec spec;
    spec.space = WeightSpace::subset;
    spec.subset_size = opts.cardinality;
    spec.metric = bm;
    spec.lambda = lambda;
    return solve_gom(ds, spec);
  }
  Eigen::MatrixXd M;
  Eigen::VectorXd target;
  linear_system(ds, false, M, target);
  Eigen::MatrixXd Q = M.transpose() * Vm * M;
  if (lambda > 0.0) Q.diagonal().array() += lambda;
  const Eigen::VectorXd b = -2.0 * (M.transpose() * (Vm * target));
  const double cnst = target.dot(Vm * target);
  SubsetOptions so;
  if (opts.cardinality > 0) so.min_size = so.max_size = opts.cardinality;
  so.enum_limit = opts.enum_limit;
  so.bb_limit = opts.bb_limit;
  const SubsetResult res = subset_search_quadratic(Q, b, cnst, so);
  require(res.exact || opts.allow_heuristic, Errc::unsupported,
          "exact subset search is limited to 30 controls; enable the heuristic to go beyond");
  return subset_solution(ds, bm, res, lambda, WeightSpace::subset);
}

static GomSolution omm_lp_direct(const Dataset& ds, double p, double lambda, const SubsetMethodOptions& opts) {
  require(lambda >= 0.0, Errc::invalid_argument, "lambda must be nonnegative");
  if (p == 2.0) return omm(ds, Eigen::MatrixXd(), lambda, opts);
  require(p == 1.0 || std::isinf(p), Errc::invalid_argument, "p must be 1, 2, or inf");
  const BalanceMetric bm = BalanceMetric::make_linear_lp(p);
  if (std::isinf(lambda)) {
    GomSpec spec;
    spec.space = WeightSpace::subset;
    spec.subset_size = opts.cardinality;
    spec.metric = bm;
    spec.lambda = lambda;
    return solve_gom(ds, spec);
  }
  const Eigen::MatrixXd X0 = ds.x_controls();
  const Eigen::RowVectorXd mean1 = ds.x_treated().colwise().mean();
  auto value = [&](const std::vector<int>& S) {
    Eigen::RowVectorXd m = Eigen::RowVectorXd::Zero(ds.d());
    for (int idx : S) m += X0.row(idx);
    m /= static_cast<double>(S.size());
    const double imb = conjugate_norm((mean1 - m).transpose(), p);
    return imb * imb + lambda / static_cast<double>(S.size());
  };
  SubsetOptions so;
  if (opts.cardinality > 0) so.min_size = so.max_size = opts.cardinality;
  so.enum_limit = opts.enum_limit;
  so.bb_limit = opts.bb_limit;
  const SubsetResult res = subset_search_generic(ds.n0(), value, so);
  require(res.exact || opts.allow_heuristic, Errc::unsupported,
          "exact subset enumeration is limited; enable the heuristic to go beyond");
  return subset_solution(ds, bm, res, lambda, WeightSpace::subset);
}

static GomSolution gnfb_direct(const Dataset& ds, double p) {
  require(p == 1.0 || p == 2.0 || std::isinf(p), Errc::invalid_argument, "p must be 1, 2, or inf");
  const Eigen::MatrixXd X0 = ds.x_controls();
  const Eigen::RowVectorXd mean1 = ds.x_treated().colwise().mean();
  const int n0 = ds.n0();
  std::vector<char> in(n0, 0);
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(ds.d());
  std::vector<int> order;
  double best_val = kInf;
  int best_len = 0;
  std::vector<int> best_set;
  for (int step = 0; step < n0; ++step) {
    int pick = -1;
    double pick_val = kInf;
    for (int j = 0; j < n0; ++j) {
      if (in[j]) continue;
      const Eigen::RowVectorXd m = (sum + X0.row(j)) / (step + 1.0);
      const double v = conjugate_norm((mean1 - m).transpose(), p);
      if (v < pick_val) {
        pick_val = v;
        pick = j;
      }
    }
    in[pick] = 1;
    sum += X0.row(pick);
    order.push_back(pick);
    if (pick_val < best_val) {
      best_val = pick_val;
      best_len = step + 1;
      best_set = order;
    }
  }
  (void)best_len;
  std::sort(best_set.begin(), best_set.end());
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n0);
  for (int idx : best_set) w[idx] = 1.0 / best_set.size();
  return finalize(ds, BalanceMetric::make_linear_lp(p),
                  weights_of(std::move(w), WeightSpace::subset, 1.0, (int)best_set.size()), 0.0,
                  {{"greedy_path_length", static_cast<double>(n0)}},
                  "greedy forward selection; best prefix of the growth path");
}

static GomSolution onfb_pp_direct(const Dataset& ds, double p) {
  require(ds.has_outcome(), Errc::invalid_argument, "outcome data required for tuning");
  const LinearFit fit = fit_ols(ds.x_controls(), ds.y_controls(), true);
  double beta_norm = 0.0;
  lp_norm_slopes(fit.slopes(), p, beta_norm);
  const double lambda_hat = clamp_lambda_hat(fit.sigma2, beta_norm);
  SubsetMethodOptions opts;
  opts.allow_heuristic = true;
  GomSolution sol;
  if (std::isinf(lambda_hat)) {
    GomSpec spec;
    spec.space = WeightSpace::subset;
    spec.metric = BalanceMetric::make_linear_lp(p);
    spec.lambda = lambda_hat;
    sol = solve_gom(ds, spec);
  } else {
    sol = omm_lp(ds, p, lambda_hat, opts);
  }
  sol.diag["lambda_hat"] = lambda_hat;
  sol.diag["sigma2_hat"] = fit.sigma2;
  sol.diag["beta_norm"] = beta_norm;
  return sol;
}

static GomSolution kom_direct(const Dataset& ds, const KernelSpec& kernel, WeightSpace space, double lambda,
                const Rescale& rescale, double b, int subset_size) {
  require(lambda >= 0.0, Errc::invalid_argument, "lambda must be nonnegative");
  const BalanceMetric bm = BalanceMetric::make_rkhs(kernel, rescale);
  if (std::isinf(lambda)) {
    GomSpec spec;
    spec.space = space;
    spec.b = b;
    spec.subset_size = subset_size;
    spec.metric = bm;
    spec.lambda = lambda;
    return solve_gom(ds, spec);
  }
  const GramBundle gb = gram(ds, kernel, rescale);
  if (gb.conditional) {
    require(space == WeightSpace::general || space == WeightSpace::simplex ||
                space == WeightSpace::b_simplex,
            Errc::unsupported, "conditional kernels support general or simplex-family weights");
    return skom(ds, kernel, space, lambda, b);
  }
  const int n1 = ds.n1();
  const Eigen::MatrixXd K00 = gb.K00();
  const Eigen::MatrixXd K10 = gb.K10();
  const Eigen::VectorXd kbar = K10.colwise().mean();  // (1/n1) K01' e
  const double cnst = gb.K11().sum() / (static_cast<double>(n1) * n1);
  switch (space) {
    case WeightSpace::general: {
      Eigen::MatrixXd A = K00;
      A.diagonal().array() += lambda;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
      const double lmin = es.eigenvalues().minCoeff();
      const double lmax = es.eigenvalues().maxCoeff();
      require(lmin > 0.0 && lmax / lmin < 1e12, Errc::numeric,
              "kernel system is numerically singular; increase lambda");
      const Eigen::VectorXd w =
          es.eigenvectors() *
          (es.eigenvalues().cwiseInverse().asDiagonal() * (es.eigenvectors().transpose() * kbar));
      std::map<std::string, double> diag{{"condition", lmax / lmin}};
      return finalize(ds, bm, weights_of(w, WeightSpace::general, 1.0, 0), lambda,
                      std::move(diag));
    }
    case WeightSpace::simplex:
    case WeightSpace::b_simplex:
      return simplex_quadratic(ds, bm, K00, Eigen::VectorXd(-2.0 * kbar), lambda, space, b,
                               "kernel matching");
    case WeightSpace::subset: {
      Eigen::MatrixXd Q = K00;
      if (lambda > 0.0) Q.diagonal().array() += lambda;
      SubsetOptions so;
      if (subset_size > 0) so.min_size = so.max_size = subset_size;
      const SubsetResult res = subset_search_quadratic(Q, Eigen::VectorXd(-2.0 * kbar), cnst, so);
      return subset_solution(ds, bm, res, lambda, WeightSpace::subset);
    }
    case WeightSpace::multisubset: {
      fail(Errc::unsupported,
           "replicated subsets are supported only at lambda = infinity (where they reduce to a "
           "plain subset search)");
    }
  }
  fail(Errc::invalid_argument, "unknown weight space");
}

static GomSolution skom_direct(const Dataset& ds, const KernelSpec& kernel, WeightSpace space, double lambda,
                 double b) {
  require(lambda >= 0.0, Errc::invalid_argument, "lambda must be nonnegative");
  require(space == WeightSpace::general || space == WeightSpace::simplex ||
              space == WeightSpace::b_simplex,
          Errc::unsupported, "conditional kernels support general or simplex-family weights");
  const BalanceMetric bm = BalanceMetric::make_rkhs(kernel);
  const GramBundle gb = gram(ds, kernel);
  require(gb.conditional && gb.G.rows() > 0, Errc::invalid_argument,
          "exact-balance kernel matching needs a conditionally positive definite kernel");
  const int n1 = ds.n1(), n0 = ds.n0();
  const Eigen::MatrixXd K00 = gb.K00();
  const Eigen::MatrixXd K10 = gb.K10();
  const Eigen::VectorXd kbar = K10.colwise().mean();
  // Exact feature constraints: A0 w = a1 (the constant row enforces sum w = 1,
  // since the constant function lies in the kernel's null space).
  Eigen::MatrixXd A0(gb.G.rows(), n0);
  Eigen::VectorXd a1 = Eigen::VectorXd::Zero(gb.G.rows());
  for (int j = 0; j < n0; ++j) A0.col(j) = gb.G.col(ds.controls[j]);
  for (int i = 0; i < n1; ++i) a1 += gb.G.col(ds.treated[i]);
  a1 /= static_cast<double>(n1);
  Eigen::MatrixXd H = K00;
  H.diagonal().array() += lambda;
  if (space == WeightSpace::general) {
    const int m = static_cast<int>(A0.rows());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n0 + m, n0 + m);
    kkt.topLeftCorner(n0, n0) = 2.0 * H;
    kkt.topRightCorner(n0, m) = A0.transpose();
    kkt.bottomLeftCorner(m, n0) = A0;
    Eigen::VectorXd rhs(n0 + m);
    rhs.head(n0) = 2.0 * kbar;
    rhs.tail(m) = a1;
    const Eigen::VectorXd sol = kkt.completeOrthogonalDecomposition().solve(rhs);
    const Eigen::VectorXd w = sol.head(n0);
    require((A0 * w - a1).cwiseAbs().maxCoeff() <= 1e-7 * std::max(1.0, a1.cwiseAbs().maxCoeff()),
            Errc::infeasible, "exact moment constraints are unsatisfiable for these controls");
    return finalize(ds, bm, weights_of(w, WeightSpace::general, 1.0, 0), lambda);
  }
  require(b * n0 >= 1.0 - 1e-12, Errc::infeasible, "cap infeasible: b * n0 < 1");
  // Reduce onto the constraint null space, where the conditional kernel is PSD.
  const Eigen::VectorXd wp = A0.completeOrthogonalDecomposition().solve(a1);
  require((A0 * wp - a1).cwiseAbs().maxCoeff() <= 1e-8 * std::max(1.0, a1.cwiseAbs().maxCoeff()),
          Errc::infeasible, "treated moments lie outside the span of the controls");
  const Eigen::MatrixXd Z = null_space_basis(A0);
  const int nz = static_cast<int>(Z.cols());
  if (nz == 0) {
    Eigen::VectorXd w = wp;
    require(w.minCoeff() >= -1e-9, Errc::infeasible,
            "the unique moment-matched weights are infeasible for this space");
    snap_simplex(w, space == WeightSpace::b_simplex ? b : 1.0);
    return finalize(ds, bm, weights_of(std::move(w), space, b, 0), lambda, {},
                    "constraints pin the weights uniquely");
  }
  QpBuild B;
  const Eigen::MatrixXd Qz = 2.0 * (Z.transpose() * H * Z);
  const Eigen::VectorXd cz = Z.transpose() * (2.0 * (H * wp) - 2.0 * kbar);
  std::vector<int> uv(nz);
  for (int i = 0; i < nz; ++i) uv[i] = B.var(-kInf, kInf, 0.0, cz[i]);
  for (int i = 0; i < nz; ++i)
    for (int j = 0; j < nz; ++j)
      if (Qz(i, j) != 0.0) B.q.emplace_back(uv[i], uv[j], Qz(i, j));
  for (int r = 0; r < n0; ++r) {
    const double hi = (space == WeightSpace::b_simplex ? b : kInf);
    const int row = B.row(-wp[r], std::isfinite(hi) ? hi - wp[r] : kInf);
    for (int i = 0; i < nz; ++i)
      if (Z(r, i) != 0.0) B.rowc(row, uv[i], Z(r, i));
  }
  QpSolution qs;
  try {
    qs = solve_qp(B.build());
  } catch (const Error& e) {
    if (e.code() == Errc::infeasible)
      fail(Errc::infeasible,
           "treated moments cannot be matched by nonnegative control weights (outside the "
           "weighted hull)");
    throw;
  }
  Eigen::VectorXd w = wp + Z * qs.x;
  snap_simplex(w, space == WeightSpace::b_simplex ? b : 1.0);
  std::map<std::string, double> diag;
  merge_qp_diag(diag, qs);
  return finalize(ds, bm, weights_of(std::move(w), space, b, 0), lambda, std::move(diag));
}

static GomSolution regression_as_gom_direct(const Dataset& ds, double lambda) {
  require(lambda >= 0.0, Errc::invalid_argument, "lambda must be nonnegative");
  KernelSpec lin;
  lin.family = KernelFamily::polynomial;
  lin.degree = 1;  // k(x, y) = 1 + x.y, the inner product on (1, x)
  const BalanceMetric bm = BalanceMetric::make_rkhs(lin);
  const int n0 = ds.n0(), n1 = ds.n1(), d = ds.d();
  if (std::isinf(lambda))
    return finalize(ds, bm, weights_of(Eigen::VectorXd::Zero(n0), WeightSpace::general, 1.0, 0),
                    lambda, {}, "infinite shrinkage sends every weight to zero");
  Eigen::MatrixXd F0(n0, d + 1), F1(n1, d + 1);
  F0.col(0).setOnes();
  F0.rightCols(d) = ds.x_controls();
  F1.col(0).setOnes();
  F1.rightCols(d) = ds.x_treated();
  const Eigen::VectorXd m = F1.colwise().mean().transpose();
  Eigen::VectorXd w;
  std::string note;
  if (lambda > 0.0) {
    Eigen::MatrixXd Gm = F0 * F0.transpose();
    Gm.diagonal().array() += lambda;
    w = Gm.llt().solve(F0 * m);
    note = "gram-side ridge form";
  } else {
    w = F0 * pinv_sym(F0.transpose() * F0) * m;
    note = "feature-side least-squares form";
  }
  return finalize(ds, bm, weights_of(std::move(w), WeightSpace::general, 1.0, 0), lambda, {},
                  std::move(note));
}

static GomSolution mixed_method_direct(const Dataset& ds, const BalanceMetric& metric, double lambda,
                         const MixedMethodOptions& opts) {
  require(lambda >= 0.0 && !std::isinf(lambda), Errc::invalid_argument,
          "finite nonnegative lambda required");
  const int n0 = ds.n0(), n1 = ds.n1();
  require(n0 <= 30, Errc::invalid_argument,
          "exact pair-plus-mean subset matching is limited to 30 controls");
  const BalanceContext ctx = compile_metric(ds, metric);
  const Eigen::MatrixXd* Dlip = nullptr;
  if (ctx.kind == MetricKind::lipschitz) Dlip = &ctx.D;
  else if (ctx.kind == MetricKind::mixed && ctx.mix_a && ctx.mix_a->kind == MetricKind::lipschitz)
    Dlip = &ctx.mix_a->D;
  const int smin = opts.cardinality > 0 ? opts.cardinality : 1;
  const int smax = opts.cardinality > 0 ? opts.cardinality : n0;
  require(smin <= n0, Errc::invalid_argument, "requested cardinality exceeds the control count");
  auto evaluate = [&](const std::vector<int>& S) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n0);
    for (int idx : S) w[idx] = 1.0 / S.size();
    Weights ws = weights_of(std::move(w), WeightSpace::subset, 1.0, (int)S.size());
    const double imb = imbalance(ctx, ws);
    return imb * imb + lambda / static_cast<double>(S.size());
  };
  double best = kInf;
  std::vector<int> best_set;
  long long nodes = 0, scored = 0;
  bool exhausted = false;
  std::vector<int> cur;
  // Depth-first include/exclude. Each subset is scored exactly once, at the
  // node where its largest element was just included. The prune bound charges
  // every treated unit its nearest still-allowed control, a transport lower
  // bound valid for any completion of the current partial decision.
  std::function<void(int)> dfs = [&](int next) {
    if (exhausted || ++nodes > opts.node_budget) {
      exhausted = true;
      return;
    }
    const int have = static_cast<int>(cur.size());
    const int rest = n0 - next;
    if (have + rest < smin || have >= smax || next == n0) return;
    if (Dlip && best < kInf) {
      double lb = 0.0;
      for (int i = 0; i < n1; ++i) {
        double m = kInf;
        for (int idx : cur) m = std::min(m, (*Dlip)(i, idx));
        for (int j = next; j < n0; ++j) m = std::min(m, (*Dlip)(i, j));
        lb += m;
      }
      lb /= n1;
      const int shi = std::min(smax, have + rest);
      const double bound = lb * lb + lambda / std::max(1, shi);
      if (bound >= best - 1e-12 * std::max(1.0, std::abs(best))) return;
    }
    cur.push_back(next);
    if (have + 1 >= smin && have + 1 <= smax) {
      ++scored;
      const double v = evaluate(cur);
      if (v < best - 1e-15) {
        best = v;
        best_set = cur;
      }
    }
    dfs(next + 1);
    cur.pop_back();
    dfs(next + 1);
  };
  dfs(0);
  require(!best_set.empty(), Errc::infeasible, "no feasible subset found");
  SubsetResult res;
  res.subset = best_set;
  res.objective = best;
  res.exact = !exhausted;
  res.evaluated = scored;
  return subset_solution(ds, metric, res, lambda, WeightSpace::subset, {},
                         exhausted ? "node budget exhausted; best subset found is reported" : "");
}

// ---------------------------------------------------------------------------

namespace {

GomSolution lambda_inf_solution(const Dataset& ds, const GomSpec& spec) {
  const int n0 = ds.n0();
  const std::string note = "infinite lambda: minimum-norm weights, imbalance as tie-break";
  switch (spec.space) {
    case WeightSpace::simplex:
      return finalize(ds, spec.metric,
                      weights_of(Eigen::VectorXd::Constant(n0, 1.0 / n0), WeightSpace::simplex,
                                 1.0, 0),
                      kInf, {}, note);
    case WeightSpace::b_simplex:
      require(spec.b * n0 >= 1.0 - 1e-12, Errc::infeasible, "cap infeasible: b * n0 < 1");
      return finalize(ds, spec.metric,
                      weights_of(Eigen::VectorXd::Constant(n0, 1.0 / n0), WeightSpace::b_simplex,
                                 spec.b, 0),
                      kInf, {}, note);
    case WeightSpace::general:
      return finalize(ds, spec.metric,
                      weights_of(Eigen::VectorXd::Zero(n0), WeightSpace::general, 1.0, 0), kInf,
                      {}, note);
    case WeightSpace::subset:
    case WeightSpace::multisubset: {
      if (spec.subset_size > 0 && spec.subset_size < n0) {
        // Fixed cardinality: the norm is constant, so search imbalance alone.
        GomSpec inner = spec;
        inner.lambda = 0.0;
        inner.space = WeightSpace::subset;
        GomSolution sol = solve_gom(ds, inner);
        sol.lambda = kInf;
        sol.objective = sol.imbalance * sol.imbalance;
        sol.weights.space = spec.space;
        sol.note = sol.note.empty()
                       ? "fixed cardinality at infinite lambda: imbalance-only search"
                       : sol.note + "; fixed cardinality at infinite lambda";
        return sol;
      }
      Eigen::VectorXd w = Eigen::VectorXd::Constant(n0, 1.0 / n0);
      return finalize(ds, spec.metric, weights_of(std::move(w), spec.space, 1.0, n0), kInf, {},
                      "free cardinality at infinite lambda: the full control set has minimal norm");
    }
  }
  fail(Errc::invalid_argument, "unknown weight space");
}

// Polyhedral epigraph for one mixed-metric component; returns the index of the
// scalar variable bounding that component's imbalance.
int append_component(QpBuild& B, const Dataset& ds, const BalanceContext& comp,
                     const std::vector<int>& wv) {
  const int n0 = ds.n0(), n1 = ds.n1();
  switch (comp.kind) {
    case MetricKind::lipschitz: {
      std::vector<int> fv(static_cast<size_t>(n1) * n0);
      for (int i = 0; i < n1; ++i)
        for (int j = 0; j < n0; ++j)
          fv[static_cast<size_t>(i) * n0 + j] = B.var(0.0, kInf, 0.0, 0.0);
      const int t = B.var(0.0, kInf, 0.0, 0.0);
      for (int i = 0; i < n1; ++i) {
        const int r = B.eq(1.0 / n1);
        for (int j = 0; j < n0; ++j) B.eqc(r, fv[static_cast<size_t>(i) * n0 + j], 1.0);
      }
      for (int j = 0; j < n0; ++j) {
        const int r = B.eq(0.0);
        for (int i = 0; i < n1; ++i) B.eqc(r, fv[static_cast<size_t>(i) * n0 + j], 1.0);
        B.eqc(r, wv[j], -1.0);
      }
      const int rc = B.eq(0.0);
      B.eqc(rc, t, -1.0);
      for (int i = 0; i < n1; ++i)
        for (int j = 0; j < n0; ++j)
          if (comp.D(i, j) != 0.0) B.eqc(rc, fv[static_cast<size_t>(i) * n0 + j], comp.D(i, j));
      return t;
    }
    case MetricKind::coarsened_lp:
    case MetricKind::linear_lp: {
      require(comp.p == 1.0 || std::isinf(comp.p), Errc::unsupported,
              "mixed components must be polyhedral (p = 1 or inf)");
      Eigen::MatrixXd M;
      Eigen::VectorXd target;
      if (comp.kind == MetricKind::coarsened_lp) {
        M = Eigen::MatrixXd::Zero(comp.treated_share.size(), n0);
        for (int kdx = 0; kdx < n0; ++kdx) M(comp.control_label[kdx], kdx) = 1.0;
        target = comp.treated_share;
      } else {
        M = comp.X0.transpose();
        target = comp.mean1.transpose();
      }
      const int k = static_cast<int>(target.size());
      auto rows_for = [&](int tv, int j) {
        const int r1 = B.row(-kInf, -target[j]);
        B.rowc(r1, tv, -1.0);
        const int r2 = B.row(-kInf, target[j]);
        B.rowc(r2, tv, -1.0);
        for (int i = 0; i < n0; ++i)
          if (M(j, i) != 0.0) {
            B.rowc(r1, wv[i], -M(j, i));
            B.rowc(r2, wv[i], M(j, i));
          }
      };
      if (comp.p == 1.0) {  // conjugate norm is the max gap
        const int t = B.var(0.0, kInf, 0.0, 0.0);
        for (int j = 0; j < k; ++j) rows_for(t, j);
        return t;
      }
      std::vector<int> tv(k);
      for (int j = 0; j < k; ++j) {
        tv[j] = B.var(0.0, kInf, 0.0, 0.0);
        rows_for(tv[j], j);
      }
      const int s = B.var(0.0, kInf, 0.0, 0.0);
      const int r = B.eq(0.0);
      B.eqc(r, s, 1.0);
      for (int j = 0; j < k; ++j) B.eqc(r, tv[j], -1.0);
      return s;
    }
    default:
      fail(Errc::unsupported,
           "mixed metrics over simplex weights support pair-distance, coarsened, and linear "
           "components only");
  }
}

GomSolution mixed_simplex(const Dataset& ds, const GomSpec& spec) {
  const BalanceContext ctx = compile_metric(ds, spec.metric);
  const int n0 = ds.n0();
  QpBuild B;
  std::vector<int> wv(n0);
  const double cap = spec.space == WeightSpace::b_simplex ? spec.b : kInf;
  for (int j = 0; j < n0; ++j)
    wv[j] = B.var(0.0, cap, spec.lambda > 0.0 ? 2.0 * spec.lambda : 0.0, 0.0);
  const int rmass = B.eq(1.0);
  for (int j = 0; j < n0; ++j) B.eqc(rmass, wv[j], 1.0);
  const int ta = append_component(B, ds, *ctx.mix_a, wv);
  const int tb = append_component(B, ds, *ctx.mix_b, wv);
  const int u = B.var(0.0, kInf, 2.0, 0.0);
  const int r = B.eq(0.0);
  B.eqc(r, u, 1.0);
  B.eqc(r, ta, -1.0);
  B.eqc(r, tb, -ctx.rho);
  const QpSolution qs = solve_qp(B.build());
  Eigen::VectorXd w = qs.x.head(n0);
  snap_simplex(w, spec.space == WeightSpace::b_simplex ? spec.b : 1.0);
  std::map<std::string, double> diag;
  merge_qp_diag(diag, qs);
  return finalize(ds, spec.metric, weights_of(std::move(w), spec.space, spec.b, 0), spec.lambda,
                  std::move(diag));
}

}  // namespace

static GomSolution solve_gom_direct(const Dataset& ds, const GomSpec& spec) {
  require(ds.n1() > 0 && ds.n0() > 0, Errc::invalid_argument, "need treated and control units");
  require(spec.lambda >= 0.0, Errc::invalid_argument, "lambda must be nonnegative");
  if (spec.space == WeightSpace::b_simplex) {
    require(spec.b > 0.0, Errc::invalid_argument, "cap must be positive");
    require(spec.b * ds.n0() >= 1.0 - 1e-12, Errc::infeasible, "cap infeasible: b * n0 < 1");
  }
  if (spec.subset_size > 0)
    require(spec.subset_size <= ds.n0(), Errc::invalid_argument,
            "requested cardinality exceeds the control count");
  if (std::isinf(spec.lambda)) return lambda_inf_solution(ds, spec);
  const double lambda = spec.lambda;
  const BalanceMetric& m = spec.metric;
  switch (m.kind) {
    case MetricKind::rkhs:
      return kom(ds, m.kernel, spec.space, lambda, m.rescale, spec.b, spec.subset_size);
    case MetricKind::lipschitz: {
      require(spec.space != WeightSpace::general, Errc::invalid_argument,
              "pair-distance imbalance needs simplex-family weights");
      if (spec.space == WeightSpace::simplex && lambda == 0.0) return nnm(ds, m.distance);
      if (spec.space == WeightSpace::simplex || spec.space == WeightSpace::b_simplex)
        return bvennm(ds, m.distance, lambda,
                      spec.space == WeightSpace::b_simplex ? spec.b : 1.0);
      if (spec.space == WeightSpace::subset) {
        const Eigen::MatrixXd D = distance_matrix(ds, m.distance);
        auto value = [&](const std::vector<int>& S) {
          Eigen::VectorXd w = Eigen::VectorXd::Zero(ds.n0());
          for (int idx : S) w[idx] = 1.0 / S.size();
          Weights ws = weights_of(std::move(w), WeightSpace::subset, 1.0, (int)S.size());
          const double imb = imbalance_lipschitz(ws, D);
          return imb * imb + lambda / static_cast<double>(S.size());
        };
        SubsetOptions so;
        if (spec.subset_size > 0) so.min_size = so.max_size = spec.subset_size;
        const SubsetResult res = subset_search_generic(ds.n0(), value, so);
        return subset_solution(ds, m, res, lambda, WeightSpace::subset);
      }
      fail(Errc::unsupported,
           "replicated subsets are supported only at lambda = infinity for this metric");
    }
    case MetricKind::caliper_avg: {
      require(simplex_family(spec.space), Errc::invalid_argument,
              "max-pair-distance imbalance needs simplex-family weights");
      if (lambda == 0.0 && spec.space == WeightSpace::simplex) return ocm(ds, m.distance, true);
      if (lambda == 0.0 && spec.space == WeightSpace::b_simplex &&
          std::abs(spec.b - 1.0 / ds.n1()) <= 1e-12)
        return ocm(ds, m.distance, false);
      fail(Errc::unsupported,
           "max-pair-distance matching supports lambda = 0 on the simplex (replacement) or with "
           "b = 1/n1 (no replacement), and lambda = infinity");
    }
    case MetricKind::coarsened_lp: {
      const CoarsenResult cr = coarsen(ds, m.coarsening);
      Eigen::MatrixXd Mm;
      Eigen::VectorXd target;
      coarsen_system(ds, cr, Mm, target);
      if (spec.space == WeightSpace::subset)
        return m.p == 2.0 ? quadratic_gap_subset(ds, m, Mm, target, Eigen::MatrixXd(), lambda,
                                                 spec.subset_size, WeightSpace::subset)
                          : [&] {
                              auto value = [&](const std::vector<int>& S) {
                                Eigen::VectorXd g = target;
                                for (int idx : S) g[cr.label[ds.controls[idx]]] -= 1.0 / S.size();
                                const double imb = conjugate_norm(g, m.p);
                                return imb * imb + lambda / static_cast<double>(S.size());
                              };
                              SubsetOptions so;
                              if (spec.subset_size > 0) so.min_size = so.max_size = spec.subset_size;
                              const SubsetResult res =
                                  subset_search_generic(ds.n0(), value, so);
                              return subset_solution(ds, m, res, lambda, WeightSpace::subset);
                            }();
      if (spec.space == WeightSpace::multisubset)
        fail(Errc::unsupported,
             "replicated subsets are supported only at lambda = infinity for this metric");
      if (m.p == 2.0)
        return quadratic_gap(ds, m, Mm, target, Eigen::MatrixXd(), lambda, spec.space, spec.b);
      if (std::isinf(m.p) && spec.space == WeightSpace::simplex)
        return bvecem(ds, m.coarsening, lambda);
      return epigraph_gap(ds, m, Mm, target, m.p, lambda, spec.space, spec.b);
    }
    case MetricKind::linear_l2: {
      Eigen::MatrixXd Mm;
      Eigen::VectorXd target;
      const Eigen::MatrixXd V = m.V.size() ? m.V : Eigen::MatrixXd::Identity(ds.d(), ds.d());
      if (spec.space == WeightSpace::general) {
        linear_system(ds, true, Mm, target);
        Eigen::MatrixXd Vt = Eigen::MatrixXd::Identity(ds.d() + 1, ds.d() + 1);
        Vt.bottomRightCorner(ds.d(), ds.d()) = V;
        return quadratic_gap(ds, m, Mm, target, Vt, lambda, spec.space, spec.b);
      }
      linear_system(ds, false, Mm, target);
      if (spec.space == WeightSpace::subset)
        return quadratic_gap_subset(ds, m, Mm, target, V, lambda, spec.subset_size,
                                    WeightSpace::subset);
      if (spec.space == WeightSpace::multisubset)
        fail(Errc::unsupported,
             "replicated subsets are supported only at lambda = infinity for this metric");
      return quadratic_gap(ds, m, Mm, target, V, lambda, spec.space, spec.b);
    }
    case MetricKind::linear_lp: {
      if (m.p == 2.0) {
        GomSpec s2 = spec;
        s2.metric = BalanceMetric::make_linear_l2(Eigen::MatrixXd::Identity(ds.d(), ds.d()));
        return solve_gom(ds, s2);
      }
      require(m.p == 1.0 || std::isinf(m.p), Errc::invalid_argument, "p must be 1, 2, or inf");
      if (spec.space == WeightSpace::subset) {
        SubsetMethodOptions so;
        so.cardinality = spec.subset_size;
        so.allow_heuristic = true;
        return omm_lp(ds, m.p, lambda, so);
      }
      if (spec.space == WeightSpace::multisubset)
        fail(Errc::unsupported,
             "replicated subsets are supported only at lambda = infinity for this metric");
      Eigen::MatrixXd Mm;
      Eigen::VectorXd target;
      linear_system(ds, spec.space == WeightSpace::general, Mm, target);
      return epigraph_gap(ds, m, Mm, target, m.p, lambda, spec.space, spec.b);
    }
    case MetricKind::mixed: {
      require(m.mix_a && m.mix_b, Errc::invalid_argument, "mixed metric needs both components");
      if (spec.space == WeightSpace::subset) {
        MixedMethodOptions mo;
        mo.cardinality = spec.subset_size;
        return mixed_method(ds, m, lambda, mo);
      }
      require(spec.space == WeightSpace::simplex || spec.space == WeightSpace::b_simplex,
              Errc::unsupported,
              "mixed metrics support simplex-family weights or subset search");
      return mixed_simplex(ds, spec);
    }
  }
  fail(Errc::invalid_argument, "unknown balance metric");
}

// ---------------------------------------------------------------------------
// Public entry points: canonicalize, solve, map weights back to input order.

GomSolution nnm(const Dataset& ds, const MetricSpec& metric) {
  return with_canonical(ds, [&](const Dataset& c, const CanonicalView& cv) {
    return nnm_direct(c, cv.identity ? metric : permute_distance(metric, cv.to_original));
  });
}

GomSolution one_to_one(const Dataset& ds, const MetricSpec& metric) {
  return with_canonical(ds, [&](const Dataset& c, const CanonicalView& cv) {
    return one_to_one_direct(c, cv.identity ? metric : permute_distance(metric, cv.to_original));
  });
}

GomSolution bvennm(const Dataset& ds, const MetricSpec& metric, double lambda, double cap) {
  return with_canonical(ds, [&](const Dataset& c, const CanonicalView& cv) {
    return bvennm_direct(c, cv.identity ? metric : permute_distance(metric, cv.to_original),
                         lambda, cap);
  });
}

GomSolution nnm_pp(const Dataset& ds, const MetricSpec& metric, const NnmPpOptions& opts) {
  return with_canonical(ds, [&](const Dataset& c, const CanonicalView& cv) {
    return nnm_pp_direct(c, cv.identity ? metric : permute_distance(metric, cv.to_original), opts);
  });
}

GomSolution ocm(const Dataset& ds, const MetricSpec& metric, bool replacement) {
  return with_canonical(ds, [&](const Dataset& c, const CanonicalView& cv) {
    return ocm_direct(c, cv.identity ? metric : permute_distance(metric, cv.to_original),
                      replacement);
  });
}

GomSolution cem(const Dataset& ds, const CoarseningSpec& c, bool prune_unmatched) {
  return with_canonical(ds, [&](const Dataset& canon, const CanonicalView&) {
    return cem_direct(canon, c, prune_unmatched);
  });
}

GomSolution bvecem(const Dataset& ds, const CoarseningSpec& c, double lambda) {
  return with_canonical(ds, [&](const Dataset& canon, const CanonicalView&) {
    return bvecem_direct(canon, c, lambda);
  });
}

GomSolution cem_pp(const Dataset& ds, const CoarseningSpec& c) {
  return with_canonical(
      ds, [&](const Dataset& canon, const CanonicalView&) { return cem_pp_direct(canon, c); });
}

GomSolution omm(const Dataset& ds, const Eigen::MatrixXd& V, double lambda,
                const SubsetMethodOptions& opts) {
  return with_canonical(ds, [&](const Dataset& canon, const CanonicalView&) {
    return omm_direct(canon, V, lambda, opts);
  });
}

GomSolution omm_lp(const Dataset& ds, double p, double lambda, const SubsetMethodOptions& opts) {
  return with_canonical(ds, [&](const Dataset& canon, const CanonicalView&) {
    return omm_lp_direct(canon, p, lambda, opts);
  });
}

GomSolution gnfb(const Dataset& ds, double p) {
  return with_canonical(
      ds, [&](const Dataset& canon, const CanonicalView&) { return gnfb_direct(canon, p); });
}

GomSolution onfb_pp(const Dataset& ds, double p) {
  return with_canonical(
      ds, [&](const Dataset& canon, const CanonicalView&) { return onfb_pp_direct(canon, p); });
}

GomSolution kom(const Dataset& ds, const KernelSpec& kernel, WeightSpace space, double lambda,
                const Rescale& rescale, double b, int subset_size) {
  return with_canonical(ds, [&](const Dataset& canon, const CanonicalView&) {
    return kom_direct(canon, kernel, space, lambda, rescale, b, subset_size);
  });
}

GomSolution skom(const Dataset& ds, const KernelSpec& kernel, WeightSpace space, double lambda,
                 double b) {
  return with_canonical(ds, [&](const Dataset& canon, const CanonicalView&) {
    return skom_direct(canon, kernel, space, lambda, b);
  });
}

GomSolution regression_as_gom(const Dataset& ds, double lambda) {
  return with_canonical(ds, [&](const Dataset& canon, const CanonicalView&) {
    return regression_as_gom_direct(canon, lambda);
  });
}

GomSolution mixed_method(const Dataset& ds, const BalanceMetric& metric, double lambda,
                         const MixedMethodOptions& opts) {
  return with_canonical(ds, [&](const Dataset& c, const CanonicalView& cv) {
    return mixed_method_direct(c, cv.identity ? metric : permute_metric(metric, cv.to_original),
                               lambda, opts);
  });
}

GomSolution solve_gom(const Dataset& ds, const GomSpec& spec) {
  return with_canonical(ds, [&](const Dataset& c, const CanonicalView& cv) {
    if (cv.identity) return solve_gom_direct(c, spec);
    GomSpec s = spec;
    s.metric = permute_metric(spec.metric, cv.to_original);
    return solve_gom_direct(c, s);
  });
}

}  // namespace gom
