#include "core/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <vector>

namespace gom {

namespace {

bool finite(double v) { return std::isfinite(v); }
bool finite(const Eigen::VectorXd& v) { return v.allFinite(); }

struct LinePoint {
  double a = 0.0, f = 0.0, df = 0.0;
};

// Strong Wolfe line search (bracket + zoom). Returns the accepted step, or a
// plain Armijo step when the curvature side cannot be satisfied, or 0 on
// outright failure. f1d evaluates phi(a) and phi'(a) along the ray.
double wolfe_search(const std::function<bool(double, double&, double&)>& f1d, double f0,
                    double df0, double a_init, int max_evals) {
  const double c1 = 1e-4, c2 = 0.9;
  const double a_max = 1e6;
  double best_armijo = 0.0;

  auto zoom = [&](LinePoint lo, LinePoint hi) -> double {
    for (int it = 0; it < max_evals; ++it) {
      // quadratic interpolation using lo's derivative, safeguarded by bisection
      double a = 0.5 * (lo.a + hi.a);
      double denom = 2.0 * (hi.f - lo.f - lo.df * (hi.a - lo.a));
      if (std::abs(denom) > 1e-300) {
        double cand = lo.a - lo.df * (hi.a - lo.a) * (hi.a - lo.a) / denom;
        double lob = std::min(lo.a, hi.a), upb = std::max(lo.a, hi.a);
        double pad = 0.1 * (upb - lob);
        if (finite(cand) && cand > lob + pad && cand < upb - pad) a = cand;
      }
      double fa, dfa;
      if (!f1d(a, fa, dfa)) {
        hi = {a, std::numeric_limits<double>::infinity(), 0.0};
        if (std::abs(hi.a - lo.a) < 1e-16 * std::max(1.0, lo.a)) break;
        continue;
      }
      if (fa > f0 + c1 * a * df0 || fa >= lo.f) {
        hi = {a, fa, dfa};
      } else {
        best_armijo = a;
        if (std::abs(dfa) <= -c2 * df0) return a;
        if (dfa * (hi.a - lo.a) >= 0) hi = lo;
        lo = {a, fa, dfa};
      }
      if (std::abs(hi.a - lo.a) < 1e-16 * std::max(1.0, std::abs(lo.a))) break;
    }
    return best_armijo;
  };

  LinePoint prev{0.0, f0, df0};
  double a = a_init;
  for (int it = 0; it < max_evals; ++it) {
    double fa, dfa;
    if (!f1d(a, fa, dfa)) {
      a = 0.5 * (prev.a + a);  // retreat toward the last good point
      if (a < 1e-20) return best_armijo;
      continue;
    }
    if (fa > f0 + c1 * a * df0 || (it > 0 && fa >= prev.f)) return zoom(prev, {a, fa, dfa});
    best_armijo = a;
    if (std::abs(dfa) <= -c2 * df0) return a;
    if (dfa >= 0) return zoom({a, fa, dfa}, prev);
    prev = {a, fa, dfa};
    a = std::min(2.0 * a, a_max);
    if (a >= a_max && prev.a >= a_max) return best_armijo;
  }
  return best_armijo;
}

}  // namespace

OptimResult minimize_nelder_mead(const PlainObjective& f, const Eigen::VectorXd& x0,
                                 int max_iter, double ftol) {
  const int n = static_cast<int>(x0.size());
  OptimResult res;
  auto safe = [&](const Eigen::VectorXd& x) {
    double v = f(x);
    return finite(v) ? v : std::numeric_limits<double>::infinity();
  };

  std::vector<Eigen::VectorXd> pts(n + 1, x0);
  std::vector<double> fv(n + 1);
  for (int i = 0; i < n; ++i) {
    double h = 0.05 * std::max(1.0, std::abs(x0[i]));
    pts[i + 1][i] += h;
  }
  for (int i = 0; i <= n; ++i) fv[i] = safe(pts[i]);

  int evals = n + 1;
  while (evals < max_iter) {
    std::vector<int> order(n + 1);
    for (int i = 0; i <= n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return fv[a] < fv[b]; });
    int best = order[0], worst = order[n], second = order[n - 1];
    if (fv[worst] - fv[best] <= ftol * (std::abs(fv[best]) + ftol)) break;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int i = 0; i <= n; ++i)
      if (i != worst) centroid += pts[i];
    centroid /= n;

    Eigen::VectorXd xr = centroid + (centroid - pts[worst]);
    double fr = safe(xr);
    ++evals;
    if (fr < fv[best]) {
      Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[worst]);
      double fe = safe(xe);
      ++evals;
      if (fe < fr) {
        pts[worst] = xe;
        fv[worst] = fe;
      } else {
        pts[worst] = xr;
        fv[worst] = fr;
      }
    } else if (fr < fv[second]) {
      pts[worst] = xr;
      fv[worst] = fr;
    } else {
      Eigen::VectorXd xc = centroid + 0.5 * (pts[worst] - centroid);
      double fc = safe(xc);
      ++evals;
      if (fc < fv[worst]) {
        pts[worst] = xc;
        fv[worst] = fc;
      } else {
        for (int i = 0; i <= n; ++i) {
          if (i == best) continue;
          pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
          fv[i] = safe(pts[i]);
          ++evals;
        }
      }
    }
  }

  int best = 0;
  for (int i = 1; i <= n; ++i)
    if (fv[i] < fv[best]) best = i;
  res.x = pts[best];
  res.value = fv[best];
  res.iterations = evals;
  res.converged = finite(res.value);
  res.note = "nelder-mead";
  return res;
}

OptimResult minimize_lbfgs(const GradObjective& f, const Eigen::VectorXd& x0,
                           const OptimOptions& opts) {
  const int n = static_cast<int>(x0.size());
  OptimResult res;
  res.x = x0;

  auto fallback = [&](const Eigen::VectorXd& from, const std::string& why) {
    if (!opts.allow_fallback) return;
    OptimResult nm =
        minimize_nelder_mead([&](const Eigen::VectorXd& x) { return f(x, nullptr); }, from);
    if (nm.value < res.value || !finite(res.value)) {
      res.x = nm.x;
      res.value = nm.value;
      Eigen::VectorXd g(n);
      double v = f(res.x, &g);
      res.grad_norm = (finite(v) && finite(g)) ? g.norm() : res.grad_norm;
      res.converged = res.grad_norm <= opts.grad_tol;
    }
    res.used_fallback = true;
    res.note = why;
  };

  Eigen::VectorXd x = x0, g(n);
  double fx = f(x, &g);
  if (!finite(fx) || !finite(g)) {
    fallback(x0, "non-finite objective or gradient at the start");
    return res;
  }
  res.value = fx;
  res.grad_norm = g.norm();

  std::deque<Eigen::VectorXd> S, Yv;
  std::deque<double> rho;
  Eigen::VectorXd d(n), xn(n), gn(n);

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    res.iterations = iter;
    if (g.norm() <= opts.grad_tol) {
      res.converged = true;
      break;
    }

    // two-loop recursion
    d = -g;
    std::vector<double> alpha(S.size());
    for (int i = static_cast<int>(S.size()) - 1; i >= 0; --i) {
      alpha[i] = rho[i] * S[i].dot(d);
      d -= alpha[i] * Yv[i];
    }
    if (!S.empty()) {
      double gamma = S.back().dot(Yv.back()) / Yv.back().squaredNorm();
      d *= gamma;
    }
    for (size_t i = 0; i < S.size(); ++i) {
      double beta = rho[i] * Yv[i].dot(d);
      d += (alpha[i] - beta) * S[i];
    }

    double df0 = g.dot(d);
    if (!(df0 < 0)) {  // not a descent direction: reset memory, try steepest descent
      S.clear();
      Yv.clear();
      rho.clear();
      d = -g;
      df0 = g.dot(d);
    }

    double fa_cache = 0.0;
    Eigen::VectorXd ga_cache(n);
    auto f1d = [&](double a, double& fv, double& dfv) {
      xn = x + a * d;
      fa_cache = f(xn, &ga_cache);
      if (!finite(fa_cache) || !finite(ga_cache)) return false;
      fv = fa_cache;
      dfv = ga_cache.dot(d);
      return true;
    };

    double a_init = S.empty() ? std::min(1.0, 1.0 / std::max(1e-12, g.norm())) : 1.0;
    double a = wolfe_search(f1d, fx, df0, a_init, opts.max_line_search);
    if (a <= 0.0) {
      if (S.empty()) {
        fallback(x, "line search failed along steepest descent");
        return res;
      }
      S.clear();
      Yv.clear();
      rho.clear();
      continue;  // retry from the same point with a fresh memory
    }

    xn = x + a * d;
    double fn = f(xn, &gn);
    if (!finite(fn) || !finite(gn)) {
      fallback(x, "non-finite objective after an accepted step");
      return res;
    }

    Eigen::VectorXd s = xn - x, y = gn - g;
    double ys = y.dot(s);
    if (ys > 1e-12 * y.norm() * s.norm()) {
      S.push_back(s);
      Yv.push_back(y);
      rho.push_back(1.0 / ys);
      if (static_cast<int>(S.size()) > opts.memory) {
        S.pop_front();
        Yv.pop_front();
        rho.pop_front();
      }
    }

    bool stalled = std::abs(fn - fx) <= 1e-14 * (1.0 + std::abs(fx)) && s.norm() <= 1e-12;
    x = xn;
    fx = fn;
    g = gn;
    res.x = x;
    res.value = fx;
    res.grad_norm = g.norm();
    if (stalled) {
      res.note = "stalled before reaching the gradient tolerance";
      break;
    }
  }
  res.converged = res.grad_norm <= opts.grad_tol;
  return res;
}

}  // namespace gom
