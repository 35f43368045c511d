#include "core/balance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "core/linalg.hpp"
#include "core/transport.hpp"

namespace gom {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool is_inf(double p) { return std::isinf(p); }

void check_p(double p) {
  require(p == 1.0 || p == 2.0 || is_inf(p), Errc::invalid_argument,
          "norm exponent must be 1, 2, or inf");
}

// conjugate-norm of a discrepancy vector for function-class exponent p
double dual_norm(const Eigen::VectorXd& g, double p) {
  if (is_inf(p)) return g.lpNorm<1>();
  if (p == 1.0) return g.lpNorm<Eigen::Infinity>();
  return g.norm();
}

Eigen::VectorXd clamped_nonneg(const Eigen::VectorXd& w) {
  return w.cwiseMax(0.0);
}

FlowProblem transport_problem(const Weights& w, const Eigen::MatrixXd& D) {
  require(simplex_family(w.space), Errc::invalid_argument,
          "transport-based imbalance requires simplex-family weights");
  require(w.n0() == D.cols(), Errc::dimension, "weights and distance matrix disagree");
  validate_weights(w);
  FlowProblem p;
  p.supply = Eigen::VectorXd::Constant(D.rows(), 1.0 / static_cast<double>(D.rows()));
  p.demand = clamped_nonneg(w.w);
  p.cost = D;
  return p;
}

}  // namespace

WeightSpace weight_space_from_string(const std::string& s) {
  if (s == "general") return WeightSpace::general;
  if (s == "simplex") return WeightSpace::simplex;
  if (s == "b_simplex") return WeightSpace::b_simplex;
  if (s == "subset") return WeightSpace::subset;
  if (s == "multisubset") return WeightSpace::multisubset;
  fail(Errc::parse, "unknown weight space: " + s);
}

std::string weight_space_to_string(WeightSpace s) {
  switch (s) {
    case WeightSpace::general: return "general";
    case WeightSpace::simplex: return "simplex";
    case WeightSpace::b_simplex: return "b_simplex";
    case WeightSpace::subset: return "subset";
    case WeightSpace::multisubset: return "multisubset";
  }
  return "simplex";
}

MetricKind metric_kind_from_string(const std::string& s) {
  if (s == "rkhs") return MetricKind::rkhs;
  if (s == "lipschitz") return MetricKind::lipschitz;
  if (s == "caliper_avg") return MetricKind::caliper_avg;
  if (s == "coarsened_lp") return MetricKind::coarsened_lp;
  if (s == "linear_l2") return MetricKind::linear_l2;
  if (s == "linear_lp") return MetricKind::linear_lp;
  if (s == "mixed") return MetricKind::mixed;
  fail(Errc::parse, "unknown balance metric: " + s);
}

std::string metric_kind_to_string(MetricKind k) {
  switch (k) {
    case MetricKind::rkhs: return "rkhs";
    case MetricKind::lipschitz: return "lipschitz";
    case MetricKind::caliper_avg: return "caliper_avg";
    case MetricKind::coarsened_lp: return "coarsened_lp";
    case MetricKind::linear_l2: return "linear_l2";
    case MetricKind::linear_lp: return "linear_lp";
    case MetricKind::mixed: return "mixed";
  }
  return "rkhs";
}

DistanceKind distance_kind_from_string(const std::string& s) {
  if (s == "euclidean") return DistanceKind::euclidean;
  if (s == "mahalanobis_sqrt") return DistanceKind::mahalanobis_sqrt;
  if (s == "mahalanobis_raw") return DistanceKind::mahalanobis_raw;
  if (s == "precomputed") return DistanceKind::precomputed;
  fail(Errc::parse, "unknown distance kind: " + s);
}

std::string distance_kind_to_string(DistanceKind k) {
  switch (k) {
    case DistanceKind::euclidean: return "euclidean";
    case DistanceKind::mahalanobis_sqrt: return "mahalanobis_sqrt";
    case DistanceKind::mahalanobis_raw: return "mahalanobis_raw";
    case DistanceKind::precomputed: return "precomputed";
  }
  return "mahalanobis_sqrt";
}

bool simplex_family(WeightSpace s) { return s != WeightSpace::general; }

void validate_weights(const Weights& w) {
  require(w.n0() > 0, Errc::invalid_argument, "weights are empty");
  if (w.space == WeightSpace::general) return;
  require(w.w.minCoeff() >= -1e-10, Errc::invalid_argument, "simplex weights must be nonnegative");
  require(std::abs(w.w.sum() - 1.0) <= 1e-10, Errc::invalid_argument,
          "simplex weights must sum to one");
  if (w.space == WeightSpace::b_simplex) {
    require(w.b > 0.0, Errc::invalid_argument, "b_simplex cap must be positive");
    require(w.w.maxCoeff() <= w.b + 1e-12, Errc::invalid_argument,
            "b_simplex weights exceed the cap");
  }
  if (w.space == WeightSpace::subset || w.space == WeightSpace::multisubset) {
    require(w.subset_size >= 1, Errc::invalid_argument, "subset size must be at least 1");
    const double np = static_cast<double>(w.subset_size);
    for (int i = 0; i < w.n0(); ++i) {
      const double k = w.w[i] * np;
      require(std::abs(k - std::round(k)) <= 1e-9 * std::max(1.0, np), Errc::invalid_argument,
              "subset weights must be multiples of 1/n0'");
      if (w.space == WeightSpace::subset) {
        require(std::round(k) <= 1.0 + 1e-9, Errc::invalid_argument,
                "subset weights allow at most one copy per control");
      }
    }
  }
}

BalanceMetric BalanceMetric::make_rkhs(const KernelSpec& k, const Rescale& r) {
  BalanceMetric m;
  m.kind = MetricKind::rkhs;
  m.kernel = k;
  m.rescale = r;
  return m;
}

BalanceMetric BalanceMetric::make_lipschitz(const MetricSpec& d) {
  BalanceMetric m;
  m.kind = MetricKind::lipschitz;
  m.distance = d;
  return m;
}

BalanceMetric BalanceMetric::make_caliper(const MetricSpec& d) {
  BalanceMetric m;
  m.kind = MetricKind::caliper_avg;
  m.distance = d;
  return m;
}

BalanceMetric BalanceMetric::make_coarsened(const CoarseningSpec& c, double p) {
  BalanceMetric m;
  m.kind = MetricKind::coarsened_lp;
  m.coarsening = c;
  m.p = p;
  return m;
}

BalanceMetric BalanceMetric::make_linear_l2(const Eigen::MatrixXd& V) {
  BalanceMetric m;
  m.kind = MetricKind::linear_l2;
  m.V = V;
  return m;
}

BalanceMetric BalanceMetric::make_linear_lp(double p) {
  BalanceMetric m;
  m.kind = MetricKind::linear_lp;
  m.p = p;
  return m;
}

BalanceMetric BalanceMetric::make_mixed(const BalanceMetric& a, const BalanceMetric& b,
                                        double rho) {
  BalanceMetric m;
  m.kind = MetricKind::mixed;
  m.mix_a = std::make_shared<BalanceMetric>(a);
  m.mix_b = std::make_shared<BalanceMetric>(b);
  m.rho = rho;
  return m;
}

Eigen::MatrixXd distance_matrix(const Dataset& ds, const MetricSpec& spec,
                                const std::vector<int>& rows, const std::vector<int>& cols) {
  const int m = static_cast<int>(rows.size());
  const int k = static_cast<int>(cols.size());
  require(m > 0 && k > 0, Errc::invalid_argument, "need nonempty unit sets for distances");
  Eigen::MatrixXd D(m, k);
  if (spec.kind == DistanceKind::precomputed) {
    const auto& P = spec.precomputed;
    require(P.rows() == ds.n() && P.cols() == ds.n(), Errc::dimension,
            "precomputed distances must be n x n");
    require((P - P.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, P.cwiseAbs().maxCoeff()),
            Errc::invalid_argument, "precomputed distances must be symmetric");
    require(P.diagonal().cwiseAbs().maxCoeff() <= 1e-12, Errc::invalid_argument,
            "precomputed distances must have zero diagonal");
    require(P.minCoeff() >= 0.0, Errc::invalid_argument,
            "precomputed distances must be nonnegative");
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < k; ++j) D(i, j) = P(rows[i], cols[j]);
    return D;
  }
  if (spec.kind == DistanceKind::euclidean) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < k; ++j) D(i, j) = (ds.X.row(rows[i]) - ds.X.row(cols[j])).norm();
    return D;
  }
  require(ds.n0() >= 2, Errc::invalid_argument, "mahalanobis distance needs >= 2 controls");
  const Eigen::MatrixXd X0 = ds.x_controls();
  const Eigen::MatrixXd Xc = X0.rowwise() - X0.colwise().mean();
  const Eigen::MatrixXd cov = Xc.transpose() * Xc / static_cast<double>(ds.n0() - 1);
  const Eigen::MatrixXd A = pinv_sym(cov);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < k; ++j) {
      const Eigen::VectorXd diff = (ds.X.row(rows[i]) - ds.X.row(cols[j])).transpose();
      const double q = std::max(0.0, diff.dot(A * diff));
      D(i, j) = spec.kind == DistanceKind::mahalanobis_sqrt ? std::sqrt(q) : q;
    }
  }
  return D;
}

Eigen::MatrixXd distance_matrix(const Dataset& ds, const MetricSpec& spec) {
  require(ds.n1() > 0 && ds.n0() > 0, Errc::invalid_argument, "need treated and control units");
  return distance_matrix(ds, spec, ds.treated, ds.controls);
}

BalanceContext compile_metric(const Dataset& ds, const BalanceMetric& m) {
  BalanceContext ctx;
  ctx.kind = m.kind;
  ctx.n1 = ds.n1();
  ctx.n0 = ds.n0();
  ctx.n = ds.n();
  ctx.p = m.p;
  ctx.rho = m.rho;
  switch (m.kind) {
    case MetricKind::rkhs:
      ctx.gb = std::make_shared<GramBundle>(gram(ds, m.kernel, m.rescale));
      break;
    case MetricKind::lipschitz:
    case MetricKind::caliper_avg:
      ctx.D = distance_matrix(ds, m.distance);
      ctx.caliper_scale = static_cast<double>(ctx.n) * (ctx.n - 1);
      break;
    case MetricKind::coarsened_lp: {
      check_p(m.p);
      ctx.coarsen = coarsen(ds, m.coarsening);
      ctx.treated_share = Eigen::VectorXd::Zero(ctx.coarsen.J);
      for (int i : ds.treated)
        ctx.treated_share[ctx.coarsen.label[static_cast<size_t>(i)]] +=
            1.0 / static_cast<double>(ds.n1());
      ctx.control_label.resize(ds.controls.size());
      for (size_t k = 0; k < ds.controls.size(); ++k)
        ctx.control_label[k] = ctx.coarsen.label[static_cast<size_t>(ds.controls[k])];
      break;
    }
    case MetricKind::linear_l2: {
      ctx.V = m.V.size() == 0 ? Eigen::MatrixXd::Identity(ds.d(), ds.d()).eval() : m.V;
      require(ctx.V.rows() == ds.d() && ctx.V.cols() == ds.d(), Errc::dimension,
              "V must be d x d");
      Eigen::LLT<Eigen::MatrixXd> llt(ctx.V);
      require(llt.info() == Eigen::Success, Errc::invalid_argument,
              "V must be symmetric positive definite");
      ctx.mean1 = ds.x_treated().colwise().mean();
      ctx.X0 = ds.x_controls();
      break;
    }
    case MetricKind::linear_lp:
      check_p(m.p);
      ctx.mean1 = ds.x_treated().colwise().mean();
      ctx.X0 = ds.x_controls();
      break;
    case MetricKind::mixed:
      require(m.mix_a && m.mix_b, Errc::invalid_argument, "mixed metric needs two components");
      require(m.rho > 0.0, Errc::invalid_argument, "mixed weight rho must be positive");
      ctx.mix_a = std::make_shared<BalanceContext>(compile_metric(ds, *m.mix_a));
      ctx.mix_b = std::make_shared<BalanceContext>(compile_metric(ds, *m.mix_b));
      break;
  }
  return ctx;
}

double imbalance(const BalanceContext& ctx, const Weights& w) {
  validate_weights(w);
  require(w.n0() == ctx.n0, Errc::dimension, "weights do not match the dataset");
  switch (ctx.kind) {
    case MetricKind::rkhs:
      return imbalance_rkhs(w.w, *ctx.gb);
    case MetricKind::lipschitz:
      return imbalance_lipschitz(w, ctx.D);
    case MetricKind::caliper_avg:
      return imbalance_caliper(w, ctx.D);
    case MetricKind::coarsened_lp: {
      Eigen::VectorXd g = ctx.treated_share;
      for (int k = 0; k < w.n0(); ++k) g[ctx.control_label[static_cast<size_t>(k)]] -= w.w[k];
      return dual_norm(g, ctx.p);
    }
    case MetricKind::linear_l2:
      return imbalance_linear_l2(w, ctx.mean1, ctx.X0, ctx.V);
    case MetricKind::linear_lp:
      return imbalance_linear_lp(w, ctx.mean1, ctx.X0, ctx.p);
    case MetricKind::mixed:
      return imbalance(*ctx.mix_a, w) + ctx.rho * imbalance(*ctx.mix_b, w);
  }
  fail(Errc::invalid_argument, "unhandled metric kind");
}

double imbalance_rkhs(const Eigen::VectorXd& w, const GramBundle& gb) {
  const int n1 = static_cast<int>(gb.treated.size());
  require(static_cast<int>(gb.controls.size()) == w.size(), Errc::dimension,
          "weights do not match the Gram bundle");
  if (gb.conditional) {
    // finite only when every null-space function is exactly balanced
    Eigen::VectorXd g1 = Eigen::VectorXd::Zero(gb.G.rows());
    for (int i : gb.treated) g1 += gb.G.col(i);
    g1 /= static_cast<double>(n1);
    Eigen::VectorXd g0 = Eigen::VectorXd::Zero(gb.G.rows());
    for (size_t j = 0; j < gb.controls.size(); ++j) g0 += w[static_cast<int>(j)] * gb.G.col(gb.controls[j]);
    const double gap = (g0 - g1).lpNorm<Eigen::Infinity>();
    if (gap > 1e-8 * std::max(1.0, g1.lpNorm<Eigen::Infinity>())) return kInf;
  }
  const Eigen::MatrixXd K11 = gb.K11();
  const Eigen::MatrixXd K10 = gb.K10();
  const Eigen::MatrixXd K00 = gb.K00();
  const double inv_n1 = 1.0 / static_cast<double>(n1);
  const double t1 = inv_n1 * inv_n1 * K11.sum();
  const double t2 = -2.0 * inv_n1 * (Eigen::RowVectorXd::Ones(n1) * K10 * w).value();
  const double t3 = w.dot(K00 * w);
  const double quad = t1 + t2 + t3;
  if (quad >= 0.0) return std::sqrt(quad);
  const double scale = std::max(1.0, std::abs(t1) + std::abs(t2) + std::abs(t3));
  if (quad >= -1e-10 * scale) return 0.0;
  std::ostringstream os;
  os << "rkhs quadratic form is negative: " << quad;
  fail(Errc::numeric, os.str());
}

double imbalance_lipschitz(const Weights& w, const Eigen::MatrixXd& D) {
  return solve_transport(transport_problem(w, D)).objective;
}

double imbalance_caliper(const Weights& w, const Eigen::MatrixXd& D) {
  return bottleneck_transport_value(transport_problem(w, D));
}

double imbalance_coarsened(const Weights& w, const Dataset& ds, const CoarsenResult& c,
                           double p) {
  check_p(p);
  validate_weights(w);
  require(w.n0() == ds.n0(), Errc::dimension, "weights do not match the dataset");
  Eigen::VectorXd g = Eigen::VectorXd::Zero(c.J);
  for (int i : ds.treated) g[c.label[static_cast<size_t>(i)]] += 1.0 / static_cast<double>(ds.n1());
  for (int k = 0; k < ds.n0(); ++k)
    g[c.label[static_cast<size_t>(ds.controls[static_cast<size_t>(k)])]] -= w.w[k];
  return dual_norm(g, p);
}

double imbalance_linear_l2(const Weights& w, const Eigen::RowVectorXd& mean1,
                           const Eigen::MatrixXd& X0, const Eigen::MatrixXd& V) {
  validate_weights(w);
  require(w.n0() == X0.rows(), Errc::dimension, "weights do not match the controls");
  const Eigen::VectorXd g = (mean1 - w.w.transpose() * X0).transpose();
  const double a = 1.0 - w.w.sum();
  const Eigen::MatrixXd Vm = V.size() == 0 ? Eigen::MatrixXd::Identity(g.size(), g.size()).eval() : V;
  return std::sqrt(a * a + g.dot(Vm * g));
}

double imbalance_linear_lp(const Weights& w, const Eigen::RowVectorXd& mean1,
                           const Eigen::MatrixXd& X0, double p) {
  check_p(p);
  validate_weights(w);
  require(w.n0() == X0.rows(), Errc::dimension, "weights do not match the controls");
  const Eigen::VectorXd g = (mean1 - w.w.transpose() * X0).transpose();
  if (simplex_family(w.space)) return dual_norm(g, p);
  Eigen::VectorXd aug(g.size() + 1);
  aug[0] = 1.0 - w.w.sum();
  aug.tail(g.size()) = g;
  return dual_norm(aug, p);
}

double variance_term(const Weights& w, double sigma2, int n1) {
  require(sigma2 >= 0.0, Errc::invalid_argument, "variance must be nonnegative");
  require(n1 > 0, Errc::invalid_argument, "need treated units");
  return sigma2 * (w.w.squaredNorm() + 1.0 / static_cast<double>(n1));
}

double variance_term(const Weights& w, const Eigen::VectorXd& sigma2_controls,
                     const Eigen::VectorXd& sigma2_treated) {
  require(sigma2_controls.size() == w.n0(), Errc::dimension, "control variances mismatch");
  require(sigma2_treated.size() > 0, Errc::invalid_argument, "need treated units");
  require(sigma2_controls.minCoeff() >= 0.0 && sigma2_treated.minCoeff() >= 0.0,
          Errc::invalid_argument, "variance must be nonnegative");
  const double n1 = static_cast<double>(sigma2_treated.size());
  return (w.w.array().square() * sigma2_controls.array()).sum() +
         sigma2_treated.sum() / (n1 * n1);
}

}  // namespace gom
