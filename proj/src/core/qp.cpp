#include "core/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gom {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Stacked {
  Eigen::SparseMatrix<double> P;  // n x n
  Eigen::VectorXd q;
  Eigen::SparseMatrix<double> A;  // m x n
  Eigen::VectorXd l, u;
  int n = 0, m = 0;
};

Stacked assemble(const QpProblem& prob) {
  Stacked s;
  s.n = prob.n();
  require(s.n > 0, Errc::dimension, "solve_qp: empty problem");
  require(prob.Q.rows() == s.n && prob.Q.cols() == s.n, Errc::dimension, "solve_qp: Q shape");
  s.P = prob.Q;
  s.q = prob.c;

  Eigen::VectorXd lb = prob.lb.size() ? prob.lb : Eigen::VectorXd::Constant(s.n, -kInf);
  Eigen::VectorXd ub = prob.ub.size() ? prob.ub : Eigen::VectorXd::Constant(s.n, kInf);
  require(lb.size() == s.n && ub.size() == s.n, Errc::dimension, "solve_qp: bound sizes");
  if (prob.simplex)
    for (int i = 0; i < s.n; ++i) lb(i) = std::max(lb(i), 0.0);

  const int meq = static_cast<int>(prob.Aeq.rows());
  const int mg = static_cast<int>(prob.G.rows());
  if (meq) require(prob.Aeq.cols() == s.n && prob.beq.size() == meq, Errc::dimension, "solve_qp: Aeq");
  if (mg) require(prob.G.cols() == s.n && prob.gl.size() == mg && prob.gu.size() == mg,
                  Errc::dimension, "solve_qp: G rows");

  std::vector<int> bound_vars;
  for (int i = 0; i < s.n; ++i)
    if (lb(i) > -kInf || ub(i) < kInf) bound_vars.push_back(i);

  s.m = meq + mg + static_cast<int>(bound_vars.size()) + (prob.simplex ? 1 : 0);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(prob.Aeq.nonZeros() + prob.G.nonZeros() + bound_vars.size() + s.n);
  s.l.resize(s.m);
  s.u.resize(s.m);
  int r = 0;
  for (int k = 0; k < prob.Aeq.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(prob.Aeq, k); it; ++it)
      trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
  for (int i = 0; i < meq; ++i) {
    s.l(r) = prob.beq(i);
    s.u(r) = prob.beq(i);
    ++r;
  }
  for (int k = 0; k < prob.G.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(prob.G, k); it; ++it)
      trip.emplace_back(meq + static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
  for (int i = 0; i < mg; ++i) {
    require(prob.gl(i) <= prob.gu(i), Errc::invalid_argument, "solve_qp: gl > gu");
    s.l(r) = prob.gl(i);
    s.u(r) = prob.gu(i);
    ++r;
  }
  for (int i : bound_vars) {
    trip.emplace_back(r, i, 1.0);
    s.l(r) = lb(i);
    s.u(r) = ub(i);
    ++r;
  }
  if (prob.simplex) {
    for (int i = 0; i < s.n; ++i) trip.emplace_back(r, i, 1.0);
    s.l(r) = 1.0;
    s.u(r) = 1.0;
    ++r;
  }
  s.A.resize(s.m, s.n);
  s.A.setFromTriplets(trip.begin(), trip.end());
  return s;
}

Eigen::VectorXd col_inf_norms(const Eigen::SparseMatrix<double>& M) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(M.cols());
  for (int k = 0; k < M.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(M, k); it; ++it)
      v(it.col()) = std::max(v(it.col()), std::abs(it.value()));
  return v;
}

Eigen::VectorXd row_inf_norms(const Eigen::SparseMatrix<double>& M) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(M.rows());
  for (int k = 0; k < M.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(M, k); it; ++it)
      v(it.row()) = std::max(v(it.row()), std::abs(it.value()));
  return v;
}

void scale_cols(Eigen::SparseMatrix<double>& M, const Eigen::VectorXd& d) {
  for (int k = 0; k < M.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(M, k); it; ++it)
      it.valueRef() *= d(it.col());
}

void scale_rows(Eigen::SparseMatrix<double>& M, const Eigen::VectorXd& d) {
  for (int k = 0; k < M.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(M, k); it; ++it)
      it.valueRef() *= d(it.row());
}

struct Scaling {
  Eigen::VectorXd D, E;  // variable / constraint equilibration
  double cost = 1.0;
};

Scaling ruiz(Stacked& s) {
  Scaling sc;
  sc.D = Eigen::VectorXd::Ones(s.n);
  sc.E = Eigen::VectorXd::Ones(s.m);
  for (int pass = 0; pass < 10; ++pass) {
    Eigen::VectorXd pc = col_inf_norms(s.P);
    Eigen::VectorXd ac = col_inf_norms(s.A);
    Eigen::VectorXd dv(s.n);
    for (int i = 0; i < s.n; ++i) {
      double m = std::max(pc(i), ac(i));
      dv(i) = m > 1e-12 ? 1.0 / std::sqrt(m) : 1.0;
      dv(i) = std::clamp(dv(i), 1e-6, 1e6);
    }
    Eigen::VectorXd ar = row_inf_norms(s.A);
    Eigen::VectorXd ev(s.m);
    for (int j = 0; j < s.m; ++j) {
      ev(j) = ar(j) > 1e-12 ? 1.0 / std::sqrt(ar(j)) : 1.0;
      ev(j) = std::clamp(ev(j), 1e-6, 1e6);
    }
    scale_cols(s.P, dv);
    scale_rows(s.P, dv);
    scale_cols(s.A, dv);
    scale_rows(s.A, ev);
    s.q = s.q.cwiseProduct(dv);
    for (int j = 0; j < s.m; ++j) {
      if (std::isfinite(s.l(j))) s.l(j) *= ev(j);
      if (std::isfinite(s.u(j))) s.u(j) *= ev(j);
    }
    sc.D = sc.D.cwiseProduct(dv);
    sc.E = sc.E.cwiseProduct(ev);
  }
  Eigen::VectorXd pc = col_inf_norms(s.P);
  double mean_pc = s.n ? pc.sum() / s.n : 0.0;
  double denom = std::max({1.0, mean_pc, s.q.lpNorm<Eigen::Infinity>()});
  sc.cost = 1.0 / denom;
  s.P *= sc.cost;
  s.q *= sc.cost;
  return sc;
}

Eigen::SparseMatrix<double> build_kkt(const Stacked& s, double sigma,
                                      const Eigen::VectorXd& rho) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(s.P.nonZeros() + s.A.nonZeros() + s.n + s.m);
  for (int k = 0; k < s.P.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(s.P, k); it; ++it)
      trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
  for (int i = 0; i < s.n; ++i) trip.emplace_back(i, i, sigma);
  for (int k = 0; k < s.A.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(s.A, k); it; ++it) {
      trip.emplace_back(s.n + static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
      trip.emplace_back(static_cast<int>(it.col()), s.n + static_cast<int>(it.row()), it.value());
    }
  for (int j = 0; j < s.m; ++j) trip.emplace_back(s.n + j, s.n + j, -1.0 / rho(j));
  Eigen::SparseMatrix<double> K(s.n + s.m, s.n + s.m);
  K.setFromTriplets(trip.begin(), trip.end());
  return K;
}

struct Residuals {
  double prim = 0.0, dual = 0.0, eps_prim = 0.0, eps_dual = 0.0;
};

}  // namespace

void QpProblem::init(int nvars) {
  Q.resize(nvars, nvars);
  c = Eigen::VectorXd::Zero(nvars);
  Aeq.resize(0, nvars);
  beq.resize(0);
  G.resize(0, nvars);
  gl.resize(0);
  gu.resize(0);
}

void QpProblem::set_Q_dense(const Eigen::MatrixXd& Qd) {
  std::vector<Eigen::Triplet<double>> trip;
  for (int i = 0; i < Qd.rows(); ++i)
    for (int j = 0; j < Qd.cols(); ++j)
      if (Qd(i, j) != 0.0) trip.emplace_back(i, j, Qd(i, j));
  Q.resize(Qd.rows(), Qd.cols());
  Q.setFromTriplets(trip.begin(), trip.end());
}

QpSolution solve_qp(const QpProblem& prob, const QpOptions& opts) {
  Stacked s = assemble(prob);
  Stacked raw = s;  // unscaled copy for residuals and polish
  Scaling sc = ruiz(s);

  Eigen::VectorXd rho = Eigen::VectorXd::Constant(s.m, opts.rho0);
  for (int j = 0; j < s.m; ++j)
    if (s.l(j) == s.u(j)) rho(j) = opts.rho0 * 1e3;

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> kkt;
  kkt.compute(build_kkt(s, opts.sigma, rho));
  require(kkt.info() == Eigen::Success, Errc::numeric, "solve_qp: KKT factorization failed");

  Eigen::VectorXd x = Eigen::VectorXd::Zero(s.n);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(s.m);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(s.m);
  for (int j = 0; j < s.m; ++j) z(j) = std::clamp(0.0, s.l(j), s.u(j));

  auto unscaled = [&](const Eigen::VectorXd& xs, const Eigen::VectorXd& ys,
                      Eigen::VectorXd& xu, Eigen::VectorXd& yu) {
    xu = sc.D.cwiseProduct(xs);
    yu = sc.E.cwiseProduct(ys) / sc.cost;
  };

  // The primal residual must be ||Ax - z||, not the bound violation of Ax:
  // on degenerate problems Ax can sit inside the bounds while z stays clamped
  // with a nonzero multiplier, which breaks complementarity undetected.
  auto residuals = [&](const Eigen::VectorXd& xu, const Eigen::VectorXd& yu,
                       const Eigen::VectorXd& zu) {
    Residuals r;
    Eigen::VectorXd ax = raw.A * xu;
    r.prim = (ax - zu).lpNorm<Eigen::Infinity>();
    Eigen::VectorXd px = raw.P * xu;
    Eigen::VectorXd aty = raw.A.transpose() * yu;
    r.dual = (px + raw.q + aty).lpNorm<Eigen::Infinity>();
    double sp = std::max({ax.lpNorm<Eigen::Infinity>(), zu.lpNorm<Eigen::Infinity>(), 1.0});
    double sd = std::max({px.lpNorm<Eigen::Infinity>(), aty.lpNorm<Eigen::Infinity>(),
                          raw.q.lpNorm<Eigen::Infinity>(), 1.0});
    r.eps_prim = opts.eps_abs + opts.eps_rel * sp;
    r.eps_dual = opts.eps_abs + opts.eps_rel * sd;
    return r;
  };

  Eigen::VectorXd rhs(s.n + s.m), sol(s.n + s.m), ztil(s.m), yprev_u, xprev_u;
  QpStatus status = QpStatus::max_iter;
  int it = 0;
  int refactor_count = 0;
  Eigen::VectorXd xu, yu;

  for (it = 1; it <= opts.max_iter; ++it) {
    rhs.head(s.n) = opts.sigma * x - s.q;
    rhs.tail(s.m) = z - y.cwiseQuotient(rho);
    sol = kkt.solve(rhs);
    Eigen::VectorXd xt = sol.head(s.n);
    Eigen::VectorXd nu = sol.tail(s.m);
    ztil = z + (nu - y).cwiseQuotient(rho);
    Eigen::VectorXd x_next = opts.alpha * xt + (1.0 - opts.alpha) * x;
    Eigen::VectorXd zmix = opts.alpha * ztil + (1.0 - opts.alpha) * z;
    Eigen::VectorXd z_next = zmix + y.cwiseQuotient(rho);
    for (int j = 0; j < s.m; ++j) z_next(j) = std::clamp(z_next(j), s.l(j), s.u(j));
    Eigen::VectorXd y_next = y + rho.cwiseProduct(zmix - z_next);
    x = x_next;
    z = z_next;
    y = y_next;

    if (it % opts.check_every != 0 && it != opts.max_iter) continue;

    unscaled(x, y, xu, yu);
    Residuals r = residuals(xu, yu, z.cwiseQuotient(sc.E));
    if (r.prim <= r.eps_prim && r.dual <= r.eps_dual) {
      status = QpStatus::solved;
      break;
    }

    // primal infeasibility certificate on the unscaled dual step
    if (yprev_u.size()) {
      Eigen::VectorXd dy = yu - yprev_u;
      double ndy = dy.lpNorm<Eigen::Infinity>();
      if (ndy > 1e-12) {
        double aty = (raw.A.transpose() * dy).lpNorm<Eigen::Infinity>();
        double support = 0.0;
        bool valid = true;
        for (int j = 0; j < s.m; ++j) {
          double p = std::max(dy(j), 0.0), n = std::min(dy(j), 0.0);
          if (p > 1e-10 * ndy && !std::isfinite(raw.u(j))) { valid = false; break; }
          if (-n > 1e-10 * ndy && !std::isfinite(raw.l(j))) { valid = false; break; }
          if (std::isfinite(raw.u(j))) support += raw.u(j) * p;
          if (std::isfinite(raw.l(j))) support += raw.l(j) * n;
        }
        if (valid && aty <= 1e-8 * ndy && support <= -1e-8 * ndy)
          fail(Errc::infeasible, "solve_qp: primal infeasible (certificate found)");
      }
    }
    yprev_u = yu;

    // dual infeasibility (unbounded objective) certificate
    if (xprev_u.size()) {
      Eigen::VectorXd dx = xu - xprev_u;
      double ndx = dx.lpNorm<Eigen::Infinity>();
      if (ndx > 1e-12) {
        double pdx = (raw.P * dx).lpNorm<Eigen::Infinity>();
        if (pdx <= 1e-8 * ndx && raw.q.dot(dx) <= -1e-8 * ndx) {
          Eigen::VectorXd adx = raw.A * dx;
          bool valid = true;
          for (int j = 0; j < s.m; ++j) {
            if (std::isfinite(raw.u(j)) && adx(j) > 1e-8 * ndx) { valid = false; break; }
            if (std::isfinite(raw.l(j)) && adx(j) < -1e-8 * ndx) { valid = false; break; }
          }
          if (valid) fail(Errc::infeasible, "solve_qp: unbounded below (dual infeasibility certificate)");
        }
      }
    }
    xprev_u = xu;

    // adaptive step size
    double rp_rel = r.prim / std::max(r.eps_prim, 1e-300);
    double rd_rel = r.dual / std::max(r.eps_dual, 1e-300);
    double ratio = std::sqrt(rp_rel / std::max(rd_rel, 1e-300));
    if ((ratio > 5.0 || ratio < 0.2) && refactor_count < 20) {
      rho *= std::clamp(ratio, 1e-3, 1e3);
      for (int j = 0; j < s.m; ++j) rho(j) = std::clamp(rho(j), 1e-8, 1e8);
      kkt.compute(build_kkt(s, opts.sigma, rho));
      require(kkt.info() == Eigen::Success, Errc::numeric, "solve_qp: KKT refactorization failed");
      ++refactor_count;
    }
  }
  it = std::min(it, opts.max_iter);

  unscaled(x, y, xu, yu);

  QpSolution out;
  out.iterations = it;
  out.status = status;

  auto kkt_residual = [&](const Eigen::VectorXd& xv, const Eigen::VectorXd& yv) {
    Eigen::VectorXd ax = raw.A * xv;
    double pv = 0.0, comp = 0.0;
    for (int j = 0; j < s.m; ++j) {
      if (std::isfinite(raw.l(j))) pv = std::max(pv, raw.l(j) - ax(j));
      if (std::isfinite(raw.u(j))) pv = std::max(pv, ax(j) - raw.u(j));
      double gap;
      if (yv(j) > 0)
        gap = std::isfinite(raw.u(j)) ? std::abs(raw.u(j) - ax(j)) : kInf;
      else if (yv(j) < 0)
        gap = std::isfinite(raw.l(j)) ? std::abs(ax(j) - raw.l(j)) : kInf;
      else
        gap = 0.0;
      comp = std::max(comp, std::min(std::abs(yv(j)), gap));
    }
    double st = (raw.P * xv + raw.q + raw.A.transpose() * yv).lpNorm<Eigen::Infinity>();
    return std::max({pv, st, comp});
  };

  double res_admm = kkt_residual(xu, yu);
  out.x = xu;
  out.y = yu;
  out.kkt_residual = res_admm;

  if (opts.polish && s.m > 0) {
    // active set from multiplier signs; equality rows always active
    std::vector<int> act;
    std::vector<double> actb;
    Eigen::VectorXd ax = raw.A * xu;
    for (int j = 0; j < s.m; ++j) {
      bool eq = raw.l(j) == raw.u(j);
      double tol = 1e-7 * std::max(1.0, std::abs(ax(j)));
      if (eq) {
        act.push_back(j);
        actb.push_back(raw.l(j));
      } else if (yu(j) < 0 || (std::isfinite(raw.l(j)) && ax(j) - raw.l(j) < tol)) {
        act.push_back(j);
        actb.push_back(raw.l(j));
      } else if (yu(j) > 0 || (std::isfinite(raw.u(j)) && raw.u(j) - ax(j) < tol)) {
        act.push_back(j);
        actb.push_back(raw.u(j));
      }
    }
    const int ma = static_cast<int>(act.size());
    if (ma >= 0) {
      std::vector<Eigen::Triplet<double>> trip;
      for (int k = 0; k < raw.P.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator itp(raw.P, k); itp; ++itp)
          trip.emplace_back(static_cast<int>(itp.row()), static_cast<int>(itp.col()), itp.value());
      const double delta = 1e-11;
      for (int i = 0; i < s.n; ++i) trip.emplace_back(i, i, delta);
      Eigen::SparseMatrix<double> Aact(ma, s.n);
      {
        std::vector<Eigen::Triplet<double>> ta;
        std::vector<int> inv(s.m, -1);
        for (int a = 0; a < ma; ++a) inv[act[a]] = a;
        for (int k = 0; k < raw.A.outerSize(); ++k)
          for (Eigen::SparseMatrix<double>::InnerIterator ita(raw.A, k); ita; ++ita)
            if (inv[ita.row()] >= 0)
              ta.emplace_back(inv[ita.row()], static_cast<int>(ita.col()), ita.value());
        Aact.setFromTriplets(ta.begin(), ta.end());
      }
      for (int k = 0; k < Aact.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator ita(Aact, k); ita; ++ita) {
          trip.emplace_back(s.n + static_cast<int>(ita.row()), static_cast<int>(ita.col()),
                            ita.value());
          trip.emplace_back(static_cast<int>(ita.col()), s.n + static_cast<int>(ita.row()),
                            ita.value());
        }
      for (int a = 0; a < ma; ++a) trip.emplace_back(s.n + a, s.n + a, -delta);
      Eigen::SparseMatrix<double> Kp(s.n + ma, s.n + ma);
      Kp.setFromTriplets(trip.begin(), trip.end());
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> fac;
      fac.compute(Kp);
      if (fac.info() == Eigen::Success) {
        Eigen::VectorXd prhs(s.n + ma);
        prhs.head(s.n) = -raw.q;
        for (int a = 0; a < ma; ++a) prhs(s.n + a) = actb[a];
        Eigen::VectorXd psol = fac.solve(prhs);
        // iterative refinement against the unregularized KKT system
        for (int round = 0; round < 3; ++round) {
          Eigen::VectorXd resid(s.n + ma);
          Eigen::VectorXd xv = psol.head(s.n), yv = psol.tail(ma);
          resid.head(s.n) = -raw.q - raw.P * xv - Aact.transpose() * yv;
          resid.tail(ma) = prhs.tail(ma) - Aact * xv;
          psol += fac.solve(resid);
        }
        Eigen::VectorXd xp = psol.head(s.n);
        Eigen::VectorXd yp = Eigen::VectorXd::Zero(s.m);
        for (int a = 0; a < ma; ++a) yp(act[a]) = psol(s.n + a);
        // A nearly singular active set can blow up through the delta-regularized
        // factorization; NaN defeats every comparison below, so gate on finiteness.
        if (xp.allFinite() && yp.allFinite()) {
          double res_p = kkt_residual(xp, yp);
          if (res_p < res_admm) {
            out.x = xp;
            out.y = yp;
            out.kkt_residual = res_p;
            out.polished = true;
            if (res_p <= opts.eps_abs * 10) out.status = QpStatus::solved;
          }
        }
      }
    }
  }

  require(out.x.allFinite(), Errc::numeric, "solve_qp: iterate is not finite");
  if (out.status != QpStatus::solved && !(out.kkt_residual <= 1e-5))
    fail(Errc::numeric, "solve_qp: did not converge (kkt residual " +
                            std::to_string(out.kkt_residual) + ")");
  if (out.status != QpStatus::solved) out.status = QpStatus::inaccurate;

  out.objective = 0.5 * out.x.dot(raw.P * out.x) + raw.q.dot(out.x);
  return out;
}

}  // namespace gom
