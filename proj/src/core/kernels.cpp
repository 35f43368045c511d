#include "core/kernels.hpp"

#include <cmath>
#include <functional>

namespace gom {

KernelFamily kernel_family_from_string(const std::string& s) {
  if (s == "polynomial") return KernelFamily::polynomial;
  if (s == "exponential") return KernelFamily::exponential;
  if (s == "gaussian") return KernelFamily::gaussian;
  if (s == "matern") return KernelFamily::matern;
  if (s == "beppo_levi") return KernelFamily::beppo_levi;
  fail(Errc::parse, "unknown kernel family: " + s);
}

std::string kernel_family_to_string(KernelFamily f) {
  switch (f) {
    case KernelFamily::polynomial: return "polynomial";
    case KernelFamily::exponential: return "exponential";
    case KernelFamily::gaussian: return "gaussian";
    case KernelFamily::matern: return "matern";
    case KernelFamily::beppo_levi: return "beppo_levi";
  }
  return "?";
}

Eigen::MatrixXd Rescale::matrix(int d) const {
  Eigen::MatrixXd R = Eigen::MatrixXd::Identity(d, d);
  if (kind == RescaleKind::none) return R;
  if (kind == RescaleKind::diag) {
    require(theta.size() == d, Errc::dimension, "rescale: diag theta size != d");
    for (int k = 0; k < d; ++k) R(k, k) = std::exp(theta(k));
    return R;
  }
  require(theta.size() == full_param_count(d), Errc::dimension, "rescale: full theta size");
  R.setZero();
  int k = 0;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j <= i; ++j, ++k) R(i, j) = (i == j) ? std::exp(theta(k)) : theta(k);
  return R;
}

int Rescale::n_params(int d) const {
  switch (kind) {
    case RescaleKind::none: return 0;
    case RescaleKind::diag: return d;
    case RescaleKind::full: return full_param_count(d);
  }
  return 0;
}

namespace {

void validate(const KernelSpec& spec, int d) {
  switch (spec.family) {
    case KernelFamily::polynomial:
      require(spec.degree >= 1, Errc::invalid_argument, "polynomial kernel: degree must be >= 1");
      break;
    case KernelFamily::matern:
      require(spec.nu == 0.5 || spec.nu == 1.5 || spec.nu == 2.5, Errc::unsupported,
              "matern kernel: nu must be one of 0.5, 1.5, 2.5 (closed forms)");
      break;
    case KernelFamily::beppo_levi:
      require(spec.bl_order >= 1, Errc::invalid_argument, "beppo_levi: order must be >= 1");
      require(2 * spec.bl_order > d, Errc::invalid_argument,
              "beppo_levi: requires 2*order > d for a valid seminorm");
      break;
    default:
      break;
  }
}

double matern_val(double nu, double r) {
  if (nu == 0.5) return std::exp(-r);
  if (nu == 1.5) {
    double a = std::sqrt(3.0) * r;
    return (1.0 + a) * std::exp(-a);
  }
  double a = std::sqrt(5.0) * r;
  return (1.0 + a + a * a / 3.0) * std::exp(-a);
}

// dK/d(r^2); finite for nu in {1.5, 2.5}; nu=0.5 guarded at r ~ 0.
double matern_dr2(double nu, double r) {
  if (nu == 0.5) {
    if (r < 1e-14) return 0.0;
    return -std::exp(-r) / (2.0 * r);
  }
  if (nu == 1.5) return -1.5 * std::exp(-std::sqrt(3.0) * r);
  return -(5.0 / 6.0) * (1.0 + std::sqrt(5.0) * r) * std::exp(-std::sqrt(5.0) * r);
}

double beppo_levi_val(int order, int d, double r) {
  if (r <= 0.0) return 0.0;
  int p = 2 * order - d;
  if (d % 2 == 1) {
    double sign = ((order - (d - 1) / 2) % 2 == 0) ? 1.0 : -1.0;
    return sign * std::pow(r, p);
  }
  double sign = ((order + (d - 2) / 2) % 2 == 0) ? 1.0 : -1.0;
  return sign * std::pow(r, p) * std::log(r);
}

double eval_pair(const KernelSpec& spec, const Eigen::RowVectorXd& x,
                 const Eigen::RowVectorXd& y) {
  switch (spec.family) {
    case KernelFamily::polynomial: {
      double s = x.dot(y);
      return std::pow(1.0 + s / spec.degree, spec.degree);
    }
    case KernelFamily::exponential:
      return std::exp(x.dot(y));
    case KernelFamily::gaussian:
      return std::exp(-0.5 * (x - y).squaredNorm());
    case KernelFamily::matern:
      return matern_val(spec.nu, (x - y).norm());
    case KernelFamily::beppo_levi:
      return beppo_levi_val(spec.bl_order, static_cast<int>(x.size()), (x - y).norm());
  }
  return 0.0;
}

}  // namespace

double kernel_eval(const KernelSpec& spec, const Eigen::RowVectorXd& x,
                   const Eigen::RowVectorXd& y) {
  require(x.size() == y.size(), Errc::dimension, "kernel_eval: dimension mismatch");
  validate(spec, static_cast<int>(x.size()));
  return eval_pair(spec, x, y);
}

Eigen::MatrixXd GramBundle::block(const std::vector<int>& rows, const std::vector<int>& cols) const {
  Eigen::MatrixXd B(rows.size(), cols.size());
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < cols.size(); ++j) B(i, j) = K(rows[i], cols[j]);
  return B;
}

GramBundle gram(const Eigen::MatrixXd& X, const KernelSpec& spec,
                const std::vector<int>& treated, const std::vector<int>& controls,
                const Rescale& rescale) {
  const int n = static_cast<int>(X.rows());
  const int d = static_cast<int>(X.cols());
  validate(spec, d);
  Eigen::MatrixXd Z = X;
  if (rescale.kind != RescaleKind::none) Z = X * rescale.matrix(d).transpose();

  GramBundle out;
  out.K.resize(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      double v = eval_pair(spec, Z.row(i), Z.row(j));
      out.K(i, j) = v;
      out.K(j, i) = v;
    }
  out.treated = treated;
  out.controls = controls;
  if (spec.family == KernelFamily::beppo_levi) {
    out.conditional = true;
    out.G = null_space_features(Z, spec.bl_order);
  } else {
    out.G.resize(0, n);
  }
  return out;
}

GramBundle gram(const Dataset& ds, const KernelSpec& spec, const Rescale& rescale) {
  return gram(ds.X, spec, ds.treated, ds.controls, rescale);
}

namespace {

void enumerate_exponents(int d, int max_deg, std::vector<std::vector<int>>& out) {
  std::vector<int> cur(d, 0);
  // graded lexicographic: by total degree, then lexicographic in exponents
  std::function<void(int, int)> rec = [&](int pos, int remaining) {
    if (pos == d - 1) {
      cur[pos] = remaining;
      out.push_back(cur);
      return;
    }
    for (int e = remaining; e >= 0; --e) {
      cur[pos] = e;
      rec(pos + 1, remaining - e);
    }
  };
  for (int g = 0; g <= max_deg; ++g) rec(0, g);
}

}  // namespace

Eigen::MatrixXd null_space_features(const Eigen::MatrixXd& X, int order) {
  require(order >= 1, Errc::invalid_argument, "null_space_features: order must be >= 1");
  const int n = static_cast<int>(X.rows());
  const int d = static_cast<int>(X.cols());
  std::vector<std::vector<int>> expo;
  enumerate_exponents(d, order - 1, expo);
  Eigen::MatrixXd G(expo.size(), n);
  for (size_t m = 0; m < expo.size(); ++m)
    for (int i = 0; i < n; ++i) {
      double v = 1.0;
      for (int k = 0; k < d; ++k)
        for (int e = 0; e < expo[m][k]; ++e) v *= X(i, k);
      G(m, i) = v;
    }
  return G;
}

void gram_with_grads(const Eigen::MatrixXd& X, const KernelSpec& spec, const Rescale& rescale,
                     Eigen::MatrixXd& K, std::vector<Eigen::MatrixXd>& dK) {
  const int n = static_cast<int>(X.rows());
  const int d = static_cast<int>(X.cols());
  validate(spec, d);
  require(spec.family != KernelFamily::beppo_levi, Errc::unsupported,
          "gram_with_grads: beppo_levi tuning not supported");
  const int P = rescale.n_params(d);
  Eigen::MatrixXd R = rescale.matrix(d);
  Eigen::MatrixXd Z = X * R.transpose();

  K.resize(n, n);
  dK.assign(P, Eigen::MatrixXd(n, n));

  const bool dot_kernel =
      spec.family == KernelFamily::polynomial || spec.family == KernelFamily::exponential;

  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      double v, dv_ds;  // dv/ds for dot kernels, dv/d(r^2) for radial ones
      if (dot_kernel) {
        double s = Z.row(i).dot(Z.row(j));
        if (spec.family == KernelFamily::polynomial) {
          v = std::pow(1.0 + s / spec.degree, spec.degree);
          dv_ds = spec.degree == 1 ? 1.0 : std::pow(1.0 + s / spec.degree, spec.degree - 1);
        } else {
          v = std::exp(s);
          dv_ds = v;
        }
      } else {
        double r2 = (Z.row(i) - Z.row(j)).squaredNorm();
        double r = std::sqrt(r2);
        if (spec.family == KernelFamily::gaussian) {
          v = std::exp(-0.5 * r2);
          dv_ds = -0.5 * v;
        } else {
          v = matern_val(spec.nu, r);
          dv_ds = matern_dr2(spec.nu, r);
        }
      }
      K(i, j) = K(j, i) = v;

      if (P == 0) continue;
      if (rescale.kind == RescaleKind::diag) {
        for (int k = 0; k < d; ++k) {
          double g;
          if (dot_kernel) {
            g = dv_ds * 2.0 * Z(i, k) * Z(j, k);
          } else {
            double u = Z(i, k) - Z(j, k);
            g = dv_ds * 2.0 * u * u;
          }
          dK[k](i, j) = dK[k](j, i) = g;
        }
      } else {  // full lower-triangular factor
        int p = 0;
        for (int a = 0; a < d; ++a)
          for (int b = 0; b <= a; ++b, ++p) {
            double ds;
            if (dot_kernel) {
              ds = X(i, b) * Z(j, a) + Z(i, a) * X(j, b);
            } else {
              double ua = Z(i, a) - Z(j, a);
              ds = 2.0 * ua * (X(i, b) - X(j, b));
            }
            if (a == b) ds *= R(a, a);  // diagonal entries live in log space
            double g = dv_ds * ds;
            dK[p](i, j) = dK[p](j, i) = g;
          }
      }
    }
}

}  // namespace gom
