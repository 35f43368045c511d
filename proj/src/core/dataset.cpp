#include "core/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace gom {

void Dataset::reindex() {
  require(T.size() == X.rows(), Errc::dimension, "dataset: T length != rows of X");
  require(Y.size() == 0 || Y.size() == X.rows(), Errc::dimension, "dataset: Y length != rows of X");
  treated.clear();
  controls.clear();
  for (int i = 0; i < T.size(); ++i) {
    require(T(i) == 0 || T(i) == 1, Errc::invalid_argument, "dataset: treatment must be 0/1");
    (T(i) == 1 ? treated : controls).push_back(i);
  }
}

Eigen::VectorXd Dataset::y_controls() const {
  Eigen::VectorXd v(n0());
  for (size_t k = 0; k < controls.size(); ++k) v(k) = Y(controls[k]);
  return v;
}

Eigen::VectorXd Dataset::y_treated() const {
  Eigen::VectorXd v(n1());
  for (size_t k = 0; k < treated.size(); ++k) v(k) = Y(treated[k]);
  return v;
}

Eigen::MatrixXd Dataset::x_controls() const {
  Eigen::MatrixXd m(n0(), d());
  for (size_t k = 0; k < controls.size(); ++k) m.row(k) = X.row(controls[k]);
  return m;
}

Eigen::MatrixXd Dataset::x_treated() const {
  Eigen::MatrixXd m(n1(), d());
  for (size_t k = 0; k < treated.size(); ++k) m.row(k) = X.row(treated[k]);
  return m;
}

Scenario scenario_from_string(const std::string& s) {
  if (s == "example1") return Scenario::example1;
  if (s == "example5") return Scenario::example5;
  if (s == "no_overlap") return Scenario::no_overlap;
  if (s == "ihdp_analog") return Scenario::ihdp_analog;
  fail(Errc::parse, "unknown scenario: " + s);
}

std::string scenario_to_string(Scenario s) {
  switch (s) {
    case Scenario::example1: return "example1";
    case Scenario::example5: return "example5";
    case Scenario::no_overlap: return "no_overlap";
    case Scenario::ihdp_analog: return "ihdp_analog";
  }
  return "?";
}

double scenario_propensity(Scenario s, const Eigen::RowVectorXd& x) {
  switch (s) {
    case Scenario::example1:
    case Scenario::no_overlap:
      return 0.95 / (1.0 + 3.0 * x.norm() / std::sqrt(2.0));
    case Scenario::example5:
      return 0.95 / (1.0 + 3.0 * x.norm() / std::sqrt(5.0));
    default:
      fail(Errc::invalid_argument, "scenario has no closed-form propensity");
  }
}

namespace {

double quad_response(const Eigen::RowVectorXd& x) {
  return x(0) * x(0) + x(1) * x(1) - 0.5 * x(0) - 0.5 * x(1);
}

constexpr int kIhdpN = 373, kIhdpN1 = 94, kIhdpCont = 6, kIhdpBin = 19;

// Group-dependent covariate distributions for the ihdp_analog generator.
const double kIhdpMu1[kIhdpCont] = {0.7, 0.5, 0.4, -0.2, 0.3, 0.6};
const double kIhdpBinP1[kIhdpBin] = {0.65, 0.20, 0.55, 0.80, 0.35, 0.50, 0.15, 0.70, 0.45, 0.25,
                                     0.60, 0.30, 0.75, 0.40, 0.55, 0.20, 0.85, 0.50, 0.35};
const double kIhdpBinP0[kIhdpBin] = {0.40, 0.45, 0.30, 0.55, 0.60, 0.25, 0.40, 0.35, 0.70, 0.50,
                                     0.30, 0.55, 0.45, 0.65, 0.25, 0.45, 0.60, 0.20, 0.50};

double ihdp_f0(const Eigen::RowVectorXd& x) {
  double v = 2.0 * std::exp(0.35 * x(0) + 0.25 * x(1)) + 0.8 * x(2) * x(3) - 0.6 * x(4) + 0.5 * x(5);
  for (int k = 0; k < kIhdpBin; ++k) v += ((k % 3) - 1) * 0.3 * x(kIhdpCont + k);
  return v;
}

Dataset generate_ihdp(const SyntheticSpec& spec, uint64_t seed) {
  Rng rng(seed);
  const int n = kIhdpN, d = kIhdpCont + kIhdpBin;
  Dataset ds;
  ds.X.resize(n, d);
  ds.T.resize(n);
  ds.Y.resize(n);
  std::vector<int> order = rng.permutation(n);
  std::vector<int> is_treated(n, 0);
  for (int k = 0; k < kIhdpN1; ++k) is_treated[order[k]] = 1;

  // AR(1) correlation chol factor for the continuous block, rho = 0.4
  Eigen::MatrixXd C(kIhdpCont, kIhdpCont);
  for (int i = 0; i < kIhdpCont; ++i)
    for (int j = 0; j < kIhdpCont; ++j) C(i, j) = std::pow(0.4, std::abs(i - j));
  Eigen::MatrixXd L = C.llt().matrixL();

  double sigma2 = spec.sigma2 >= 0 ? spec.sigma2 : 1.0;
  for (int i = 0; i < n; ++i) {
    int t = is_treated[i];
    Eigen::VectorXd z(kIhdpCont);
    for (int k = 0; k < kIhdpCont; ++k) z(k) = rng.normal();
    Eigen::VectorXd xc = L * z;
    for (int k = 0; k < kIhdpCont; ++k) ds.X(i, k) = xc(k) + (t ? kIhdpMu1[k] : 0.0);
    for (int k = 0; k < kIhdpBin; ++k) {
      double p = t ? kIhdpBinP1[k] : kIhdpBinP0[k];
      ds.X(i, kIhdpCont + k) = rng.uniform() < p ? 1.0 : 0.0;
    }
    ds.T(i) = t;
    ds.Y(i) = ihdp_f0(ds.X.row(i)) + spec.tau * t + std::sqrt(sigma2) * rng.normal();
  }
  ds.col_names.resize(d);
  for (int k = 0; k < kIhdpCont; ++k) ds.col_names[k] = "xc" + std::to_string(k + 1);
  for (int k = 0; k < kIhdpBin; ++k) ds.col_names[kIhdpCont + k] = "xb" + std::to_string(k + 1);
  ds.true_f0 = ihdp_f0;
  ds.true_sigma2 = sigma2;
  ds.reindex();
  return ds;
}

}  // namespace

Dataset generate(const SyntheticSpec& spec, uint64_t seed) {
  if (spec.scenario == Scenario::ihdp_analog) return generate_ihdp(spec, seed);

  require(spec.n >= 2, Errc::invalid_argument, "generate: n must be >= 2");
  Rng rng(seed);
  const int d = spec.scenario == Scenario::example5 ? 5 : 2;
  const double sigma2 = spec.sigma2 >= 0 ? spec.sigma2 : 3.0;
  Dataset ds;
  ds.X.resize(spec.n, d);
  ds.T.resize(spec.n);
  ds.Y.resize(spec.n);
  for (int i = 0; i < spec.n; ++i) {
    for (int k = 0; k < d; ++k) ds.X(i, k) = rng.uniform(-1.0, 1.0);
    double p = scenario_propensity(spec.scenario, ds.X.row(i));
    int t;
    if (spec.scenario == Scenario::no_overlap) {
      t = p > 0.4 ? 1 : 0;
    } else {
      t = rng.uniform() < p ? 1 : 0;
    }
    ds.T(i) = t;
    ds.Y(i) = quad_response(ds.X.row(i)) + spec.tau * t + std::sqrt(sigma2) * rng.normal();
  }
  ds.col_names.resize(d);
  for (int k = 0; k < d; ++k) ds.col_names[k] = "x" + std::to_string(k + 1);
  ds.true_f0 = quad_response;
  ds.true_sigma2 = sigma2;
  ds.reindex();
  return ds;
}

void redraw_outcomes(Dataset& ds, const std::function<double(const Eigen::RowVectorXd&)>& f0,
                     double sigma2, double tau, Rng& rng) {
  require(sigma2 >= 0, Errc::invalid_argument, "redraw_outcomes: sigma2 < 0");
  ds.Y.resize(ds.n());
  double sd = std::sqrt(sigma2);
  for (int i = 0; i < ds.n(); ++i)
    ds.Y(i) = f0(ds.X.row(i)) + tau * ds.T(i) + sd * rng.normal();
  ds.true_f0 = f0;
  ds.true_sigma2 = sigma2;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, int line_no) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc() && p == s.data() + s.size(), Errc::parse,
          "csv: bad numeric field '" + s + "' at line " + std::to_string(line_no));
  return v;
}

std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

}  // namespace

namespace {

Dataset load_csv_stream(std::istream& in, const CsvSchema& schema, const std::string& what) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), Errc::parse, "csv: empty input " + what);
  auto header = split_csv_line(line);
  int t_col = -1, y_col = -1;
  std::vector<int> x_cols;
  std::vector<std::string> names;
  for (int j = 0; j < static_cast<int>(header.size()); ++j) {
    if (header[j] == schema.treatment_col) {
      t_col = j;
    } else if (!schema.outcome_col.empty() && header[j] == schema.outcome_col) {
      y_col = j;
    } else {
      x_cols.push_back(j);
      names.push_back(header[j]);
    }
  }
  require(t_col >= 0, Errc::parse, "csv: missing treatment column " + schema.treatment_col);

  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    require(f.size() == header.size(), Errc::parse,
            "csv: field count mismatch at line " + std::to_string(line_no));
    std::vector<double> r(f.size());
    for (size_t j = 0; j < f.size(); ++j) r[j] = parse_double(f[j], line_no);
    rows.push_back(std::move(r));
  }
  require(!rows.empty(), Errc::parse, "csv: no data rows in " + what);

  Dataset ds;
  const int n = static_cast<int>(rows.size());
  const int d = static_cast<int>(x_cols.size());
  ds.X.resize(n, d);
  ds.T.resize(n);
  if (y_col >= 0) ds.Y.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) ds.X(i, j) = rows[i][x_cols[j]];
    double t = rows[i][t_col];
    require(t == 0.0 || t == 1.0, Errc::parse,
            "csv: treatment must be 0/1 at line " + std::to_string(i + 2));
    ds.T(i) = static_cast<int>(t);
    if (y_col >= 0) ds.Y(i) = rows[i][y_col];
  }
  ds.col_names = names;
  ds.reindex();
  return ds;
}

void write_csv_stream(const Dataset& ds, std::ostream& out, const CsvSchema& schema) {
  for (int j = 0; j < ds.d(); ++j) {
    out << (j < static_cast<int>(ds.col_names.size()) ? ds.col_names[j]
                                                      : "x" + std::to_string(j + 1))
        << ',';
  }
  out << schema.treatment_col;
  bool with_y = ds.has_outcome() && !schema.outcome_col.empty();
  if (with_y) out << ',' << schema.outcome_col;
  out << '\n';
  for (int i = 0; i < ds.n(); ++i) {
    for (int j = 0; j < ds.d(); ++j) out << format_double(ds.X(i, j)) << ',';
    out << ds.T(i);
    if (with_y) out << ',' << format_double(ds.Y(i));
    out << '\n';
  }
}

}  // namespace

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  require(in.good(), Errc::io, "csv: cannot open " + path);
  return load_csv_stream(in, schema, path);
}

Dataset parse_csv_text(const std::string& text, const CsvSchema& schema) {
  std::istringstream in(text);
  return load_csv_stream(in, schema, "(inline text)");
}

void save_csv(const Dataset& ds, const std::string& path, const CsvSchema& schema) {
  std::ofstream out(path);
  require(out.good(), Errc::io, "csv: cannot write " + path);
  write_csv_stream(ds, out, schema);
  require(out.good(), Errc::io, "csv: write failed for " + path);
}

std::string csv_text(const Dataset& ds, const CsvSchema& schema) {
  std::ostringstream out;
  write_csv_stream(ds, out, schema);
  return out.str();
}

CoarsenResult coarsen(const Dataset& ds, const CoarseningSpec& spec) {
  require(spec.levels >= 1, Errc::invalid_argument, "coarsen: levels must be >= 1");
  std::vector<int> cols = spec.columns;
  if (cols.empty())
    for (int j = 0; j < ds.d(); ++j) cols.push_back(j);
  for (int j : cols)
    require(j >= 0 && j < ds.d(), Errc::invalid_argument, "coarsen: column out of range");

  const int n = ds.n();
  // Per selected column: sorted cut points; value -> bin = #cuts below-or-equal.
  std::vector<std::vector<double>> cuts(cols.size());
  for (size_t cj = 0; cj < cols.size(); ++cj) {
    int j = cols[cj];
    if (cj < spec.cuts.size() && !spec.cuts[cj].empty()) {
      cuts[cj] = spec.cuts[cj];
      std::sort(cuts[cj].begin(), cuts[cj].end());
      continue;
    }
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) v[i] = ds.X(i, j);
    std::sort(v.begin(), v.end());
    std::vector<double> distinct;
    for (double x : v)
      if (distinct.empty() || x != distinct.back()) distinct.push_back(x);
    if (distinct.size() <= 2) {
      // binary / constant column: each distinct value is its own level
      for (size_t k = 0; k + 1 < distinct.size(); ++k)
        cuts[cj].push_back(0.5 * (distinct[k] + distinct[k + 1]));
      continue;
    }
    for (int b = 1; b < spec.levels; ++b) {
      double q = static_cast<double>(b) / spec.levels;
      double pos = q * (n - 1);
      int lo = static_cast<int>(std::floor(pos));
      double frac = pos - lo;
      double cut = v[lo] + frac * (v[std::min(lo + 1, n - 1)] - v[lo]);
      if (cuts[cj].empty() || cut > cuts[cj].back()) cuts[cj].push_back(cut);
    }
  }

  std::vector<std::vector<int>> key(n, std::vector<int>(cols.size()));
  for (int i = 0; i < n; ++i)
    for (size_t cj = 0; cj < cols.size(); ++cj) {
      const auto& c = cuts[cj];
      key[i][cj] =
          static_cast<int>(std::upper_bound(c.begin(), c.end(), ds.X(i, cols[cj])) - c.begin());
    }

  std::map<std::vector<int>, int> ids;
  CoarsenResult out;
  out.label.resize(n);
  for (int i = 0; i < n; ++i) {
    auto it = ids.find(key[i]);
    if (it == ids.end()) it = ids.emplace(key[i], static_cast<int>(ids.size())).first;
    out.label[i] = it->second;
  }
  out.J = static_cast<int>(ids.size());
  out.n1j.assign(out.J, 0);
  out.n0j.assign(out.J, 0);
  for (int i = 0; i < n; ++i) (ds.T(i) ? out.n1j : out.n0j)[out.label[i]]++;
  return out;
}

}  // namespace gom
