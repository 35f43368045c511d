#include "core/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <optional>
#include <sstream>
#include <thread>

#include "core/balance.hpp"
#include "core/error.hpp"
#include "core/regress.hpp"
#include "core/rng.hpp"
#include "core/transport.hpp"

namespace gom {

namespace {

using nlohmann::json;

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? kNan : s / v.size();
}

double se_of_mean(const std::vector<double>& v) {
  if (v.size() < 2) return kNan;
  double m = mean_of(v), s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / (v.size() - 1.0) / v.size());
}

double median_of(std::vector<double> v) {
  if (v.empty()) return kNan;
  std::sort(v.begin(), v.end());
  size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

void parallel_for(int jobs, int count, const std::function<void(int)>& body) {
  jobs = std::max(1, jobs);
  if (jobs == 1 || count <= 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= count) return;
      body(i);
    }
  };
  std::vector<std::thread> pool;
  int k = std::min(jobs, count);
  pool.reserve(k);
  for (int t = 0; t < k; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

GomSolution ipw_weights(const Dataset& ds, double clip) {
  require(ds.n1() > 0 && ds.n0() > 0, Errc::invalid_argument, "ipw: both arms required");
  require(clip > 0, Errc::invalid_argument, "ipw: clip must be positive");
  CanonicalView cv = canonical_view(ds);
  const Dataset& c = cv.identity ? ds : cv.ds;
  LogisticFit fit = fit_logistic(c.X, c.T);
  Eigen::VectorXd p = fit.predict_proba(c.X);
  Eigen::VectorXd w(c.n0());
  int clipped = 0;
  for (int j = 0; j < c.n0(); ++j) {
    double pi = p[c.controls[j]];
    double v = pi / (c.n1() * (1.0 - pi));
    if (!std::isfinite(v) || v > clip) {
      v = clip;
      ++clipped;
    }
    w[j] = v;
  }
  GomSolution sol;
  sol.weights.w = weights_to_input_order(cv, w);
  sol.weights.space = WeightSpace::general;
  sol.lambda = kNan;
  sol.imbalance = kNan;
  sol.objective = kNan;
  sol.variance_term = w.squaredNorm() + 1.0 / ds.n1();
  sol.note = "inverse propensity baseline";
  sol.diag["clipped"] = clipped;
  if (fit.ridged) sol.diag["propensity_ridged"] = 1.0;
  return sol;
}

GomSolution psm_weights(const Dataset& ds) {
  require(ds.n0() >= ds.n1() && ds.n1() > 0, Errc::invalid_argument,
          "psm: needs at least as many controls as treated");
  CanonicalView cv = canonical_view(ds);
  const Dataset& c = cv.identity ? ds : cv.ds;
  LogisticFit fit = fit_logistic(c.X, c.T);
  Eigen::VectorXd p = fit.predict_proba(c.X);
  auto logit = [](double v) {
    v = std::min(std::max(v, 1e-12), 1.0 - 1e-12);
    return std::log(v / (1.0 - v));
  };
  Eigen::MatrixXd cost(c.n1(), c.n0());
  for (int i = 0; i < c.n1(); ++i)
    for (int j = 0; j < c.n0(); ++j)
      cost(i, j) = std::abs(logit(p[c.treated[i]]) - logit(p[c.controls[j]]));
  AssignSolution as = solve_assignment(cost, true);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(c.n0());
  for (int i = 0; i < c.n1(); ++i) w[as.match[i]] += 1.0 / c.n1();
  GomSolution sol;
  sol.weights.w = weights_to_input_order(cv, w);
  sol.weights.space = WeightSpace::b_simplex;
  sol.weights.b = 1.0 / ds.n1();
  sol.lambda = kNan;
  sol.imbalance = kNan;
  sol.objective = kNan;
  sol.variance_term = w.squaredNorm() + 1.0 / ds.n1();
  sol.note = "propensity score matching baseline";
  if (fit.ridged) sol.diag["propensity_ridged"] = 1.0;
  return sol;
}

GomSolution uniform_weights(const Dataset& ds) {
  require(ds.n1() > 0 && ds.n0() > 0, Errc::invalid_argument, "uniform: both arms required");
  GomSolution sol;
  sol.weights.w = Eigen::VectorXd::Constant(ds.n0(), 1.0 / ds.n0());
  sol.weights.space = WeightSpace::simplex;
  sol.lambda = kNan;
  sol.imbalance = kNan;
  sol.objective = kNan;
  sol.variance_term = 1.0 / ds.n0() + 1.0 / ds.n1();
  sol.note = "no matching";
  return sol;
}

KernelSpec kernel_from_json(const json& j) {
  KernelSpec k;
  if (j.contains("family")) k.family = kernel_family_from_string(j.at("family").get<std::string>());
  k.degree = j.value("degree", k.degree);
  k.nu = j.value("nu", k.nu);
  k.bl_order = j.value("bl_order", k.bl_order);
  return k;
}

Rescale rescale_from_json(const json& j, int d) {
  Rescale r;
  std::string kind = j.value("kind", "none");
  if (kind == "none") {
    r.kind = RescaleKind::none;
    return r;
  }
  r.kind = kind == "diag" ? RescaleKind::diag : RescaleKind::full;
  require(kind == "diag" || kind == "full", Errc::parse, "rescale kind must be none|diag|full");
  if (j.contains("theta")) {
    std::vector<double> t = j.at("theta").get<std::vector<double>>();
    r.theta = Eigen::Map<Eigen::VectorXd>(t.data(), t.size());
  } else {
    r.theta = Eigen::VectorXd::Zero(r.n_params(d));
  }
  require(r.theta.size() == r.n_params(d), Errc::dimension, "rescale theta has the wrong length");
  return r;
}

MetricSpec distance_from_json(const json& j) {
  MetricSpec m;
  if (j.contains("kind")) m.kind = distance_kind_from_string(j.at("kind").get<std::string>());
  require(m.kind != DistanceKind::precomputed, Errc::parse,
          "precomputed distances are not available through configs");
  return m;
}

CoarseningSpec coarsening_from_json(const json& j) {
  CoarseningSpec c;
  c.levels = j.value("levels", c.levels);
  if (j.contains("columns")) c.columns = j.at("columns").get<std::vector<int>>();
  if (j.contains("cuts")) c.cuts = j.at("cuts").get<std::vector<std::vector<double>>>();
  return c;
}

double lambda_from_json(const json& j) {
  if (j.is_string()) {
    std::string s = j.get<std::string>();
    require(s == "inf" || s == "infinity", Errc::parse, "lambda string must be \"inf\"");
    return std::numeric_limits<double>::infinity();
  }
  require(j.is_number(), Errc::parse, "lambda must be a number or \"inf\"");
  return j.get<double>();
}

BalanceMetric metric_from_json(const json& j) {
  std::string kind = j.value("kind", "rkhs");
  if (kind == "rkhs") {
    KernelSpec k = j.contains("kernel") ? kernel_from_json(j.at("kernel")) : KernelSpec{};
    Rescale r;
    if (j.contains("rescale")) {
      const json& rj = j.at("rescale");
      require(rj.value("kind", "none") == "none" || rj.contains("theta"), Errc::parse,
              "metric rescale needs an explicit theta");
      std::vector<double> t = rj.value("theta", std::vector<double>{});
      r.kind = rj.value("kind", "none") == "diag" ? RescaleKind::diag
               : rj.value("kind", "none") == "full" ? RescaleKind::full
                                                    : RescaleKind::none;
      r.theta = Eigen::Map<Eigen::VectorXd>(t.data(), t.size());
    }
    return BalanceMetric::make_rkhs(k, r);
  }
  if (kind == "lipschitz")
    return BalanceMetric::make_lipschitz(
        j.contains("distance") ? distance_from_json(j.at("distance")) : MetricSpec{});
  if (kind == "caliper_avg")
    return BalanceMetric::make_caliper(
        j.contains("distance") ? distance_from_json(j.at("distance")) : MetricSpec{});
  if (kind == "coarsened_lp") {
    double p = j.value("p", 1.0);
    if (j.contains("p") && j.at("p").is_string()) p = std::numeric_limits<double>::infinity();
    return BalanceMetric::make_coarsened(
        j.contains("coarsening") ? coarsening_from_json(j.at("coarsening")) : CoarseningSpec{}, p);
  }
  if (kind == "linear_l2") return BalanceMetric::make_linear_l2(Eigen::MatrixXd());
  if (kind == "linear_lp") {
    double p = j.value("p", 1.0);
    if (j.contains("p") && j.at("p").is_string()) p = std::numeric_limits<double>::infinity();
    return BalanceMetric::make_linear_lp(p);
  }
  if (kind == "mixed") {
    BalanceMetric a = metric_from_json(j.at("a"));
    BalanceMetric b = metric_from_json(j.at("b"));
    return BalanceMetric::make_mixed(a, b, j.value("rho", 1.0));
  }
  fail(Errc::parse, "unknown metric kind: " + kind);
}

namespace {

CoarseningSpec coarsening_from_method(const Dataset& ds, const json& j) {
  if (!j.contains("coarsening") || (j.at("coarsening").is_string() &&
                                    j.at("coarsening").get<std::string>() == "auto"))
    return cem_auto_levels(ds, j.value("max_levels", 8));
  return coarsening_from_json(j.at("coarsening"));
}

}  // namespace

MethodRun run_method(const Dataset& ds, const json& method, std::uint64_t seed) {
  require(method.contains("name"), Errc::parse, "method config needs a name");
  const std::string name = method.at("name").get<std::string>();
  MethodRun out;
  out.name = name;

  auto space_of = [&](const std::string& dflt) {
    return weight_space_from_string(method.value("space", dflt));
  };
  auto lambda_of = [&](double dflt) {
    return method.contains("lambda") ? lambda_from_json(method.at("lambda")) : dflt;
  };

  if (name == "kom") {
    KernelSpec k = method.contains("kernel") ? kernel_from_json(method.at("kernel")) : KernelSpec{};
    Rescale r = method.contains("rescale") ? rescale_from_json(method.at("rescale"), ds.d())
                                           : Rescale{};
    out.sol = kom(ds, k, space_of("simplex"), lambda_of(1.0), r, method.value("b", 1.0),
                  method.value("subset_size", 0));
  } else if (name == "kom_pp") {
    KernelSpec k = method.contains("kernel") ? kernel_from_json(method.at("kernel")) : KernelSpec{};
    KomPpOptions opts;
    std::string rk = method.value("rescale_kind", method.value("ard", false) ? "diag" : "none");
    opts.rescale = rk == "diag" ? RescaleKind::diag
                  : rk == "full" ? RescaleKind::full
                                 : RescaleKind::none;
    opts.tune.restarts = method.value("restarts", 10);
    opts.tune.seed = seed;
    opts.b = method.value("b", 1.0);
    opts.subset_size = method.value("subset_size", 0);
    KomPpResult res = kom_pp(ds, k, space_of("simplex"), opts);
    out.sol = res.sol;
    out.hyper = res.hyper;
  } else if (name == "skom") {
    KernelSpec k = method.contains("kernel") ? kernel_from_json(method.at("kernel")) : KernelSpec{};
    if (!method.contains("kernel")) k.family = KernelFamily::beppo_levi;
    out.sol = skom(ds, k, space_of("simplex"), lambda_of(1.0), method.value("b", 1.0));
  } else if (name == "nnm") {
    out.sol = nnm(ds, method.contains("distance") ? distance_from_json(method.at("distance"))
                                                  : MetricSpec{});
  } else if (name == "one_to_one") {
    out.sol = one_to_one(ds, method.contains("distance") ? distance_from_json(method.at("distance"))
                                                         : MetricSpec{});
  } else if (name == "bvennm") {
    out.sol = bvennm(ds,
                     method.contains("distance") ? distance_from_json(method.at("distance"))
                                                 : MetricSpec{},
                     lambda_of(1.0), method.value("cap", 1.0));
  } else if (name == "nnm_pp") {
    NnmPpOptions opts;
    opts.folds = method.value("folds", 10);
    if (method.contains("psi_grid")) opts.psi_grid = method.at("psi_grid").get<std::vector<double>>();
    opts.seed = seed;
    out.sol = nnm_pp(ds,
                     method.contains("distance") ? distance_from_json(method.at("distance"))
                                                 : MetricSpec{},
                     opts);
  } else if (name == "ocm") {
    out.sol = ocm(ds,
                  method.contains("distance") ? distance_from_json(method.at("distance"))
                                              : MetricSpec{},
                  method.value("replacement", true));
  } else if (name == "cem") {
    out.sol = cem(ds, coarsening_from_method(ds, method), method.value("prune", false));
  } else if (name == "bvecem") {
    out.sol = bvecem(ds, coarsening_from_method(ds, method), lambda_of(1.0));
  } else if (name == "cem_pp") {
    out.sol = cem_pp(ds, coarsening_from_method(ds, method));
  } else if (name == "omm") {
    SubsetMethodOptions opts;
    opts.cardinality = method.value("cardinality", 0);
    opts.allow_heuristic = method.value("allow_heuristic", false);
    out.sol = omm(ds, Eigen::MatrixXd(), lambda_of(0.0), opts);
  } else if (name == "omm_lp") {
    SubsetMethodOptions opts;
    opts.cardinality = method.value("cardinality", 0);
    opts.allow_heuristic = method.value("allow_heuristic", false);
    double p = method.value("p", 1.0);
    if (method.contains("p") && method.at("p").is_string()) p = std::numeric_limits<double>::infinity();
    out.sol = omm_lp(ds, p, lambda_of(0.0), opts);
  } else if (name == "gnfb") {
    double p = method.value("p", 1.0);
    if (method.contains("p") && method.at("p").is_string()) p = std::numeric_limits<double>::infinity();
    out.sol = gnfb(ds, p);
  } else if (name == "onfb_pp") {
    double p = method.value("p", 1.0);
    if (method.contains("p") && method.at("p").is_string()) p = std::numeric_limits<double>::infinity();
    out.sol = onfb_pp(ds, p);
  } else if (name == "regression_as_gom") {
    out.sol = regression_as_gom(ds, lambda_of(0.0));
  } else if (name == "mixed") {
    MixedMethodOptions opts;
    opts.cardinality = method.value("cardinality", 0);
    out.sol = mixed_method(ds, metric_from_json(method.at("metric")), lambda_of(0.0), opts);
  } else if (name == "gom") {
    GomSpec spec;
    spec.space = space_of("simplex");
    spec.metric = method.contains("metric") ? metric_from_json(method.at("metric"))
                                            : BalanceMetric{};
    spec.lambda = lambda_of(0.0);
    spec.b = method.value("b", 1.0);
    spec.subset_size = method.value("subset_size", 0);
    out.sol = solve_gom(ds, spec);
  } else if (name == "ipw") {
    out.sol = ipw_weights(ds, method.value("clip", 1e4));
  } else if (name == "psm") {
    out.sol = psm_weights(ds);
  } else if (name == "uniform" || name == "none") {
    out.sol = uniform_weights(ds);
  } else {
    fail(Errc::parse, "unknown method: " + name);
  }
  return out;
}

namespace {

F0Spec f0_from_json(const json& j, std::uint64_t seed) {
  F0Spec spec;
  const std::string mode = j.value("mode", "ols");
  if (mode == "ols") {
    spec.mode = F0Mode::in_sample_ols;
  } else if (mode == "kernel_ridge") {
    spec.mode = F0Mode::in_sample_kernel_ridge;
  } else if (mode == "cross_fold") {
    spec.mode = F0Mode::cross_fold;
  } else {
    fail(Errc::parse, "unknown f0 mode: " + mode);
  }
  if (j.contains("kernel")) spec.kernel = kernel_from_json(j.at("kernel"));
  spec.lambda = j.value("lambda", spec.lambda);
  spec.folds = j.value("folds", spec.folds);
  spec.fold_base_ridge = j.value("fold_base_ridge", spec.fold_base_ridge);
  spec.seed = seed;
  return spec;
}

}  // namespace

EstimateReport estimate_from_config(const Dataset& ds, const json& cfg, std::uint64_t seed) {
  require(ds.has_outcome(), Errc::invalid_argument, "estimate: outcomes required");
  const json method = cfg.contains("method") ? cfg.at("method") : json{{"name", "kom_pp"}};
  const std::string est = cfg.value("estimator", "tau_w");
  const double alpha = cfg.value("alpha", 0.05);

  // One full pipeline evaluation; reused verbatim by the bootstrap.
  auto point = [&](const Dataset& data) -> double {
    if (est == "akw_closed") {
      KernelSpec k =
          method.contains("kernel") ? kernel_from_json(method.at("kernel")) : KernelSpec{};
      double lam = method.contains("lambda") ? lambda_from_json(method.at("lambda")) : 1.0;
      Rescale r = method.contains("rescale") ? rescale_from_json(method.at("rescale"), data.d())
                                             : Rescale{};
      return akw_closed(data, k, lam, r);
    }
    MethodRun run = run_method(data, method, seed);
    if (est == "tau_w") return tau_w(data, run.sol.weights);
    if (est == "tau_wls") return tau_wls(data, run.sol.weights);
    if (est == "tau_aw") {
      F0Spec f0 = f0_from_json(cfg.contains("f0") ? cfg.at("f0") : json::object(),
                               derive_seed(seed, 17));
      return tau_aw(data, run.sol.weights, fit_f0(data, f0));
    }
    fail(Errc::parse, "unknown estimator: " + est);
  };

  EstimateReport rep;
  rep.estimator = est;
  rep.alpha = alpha;
  rep.tau_hat = point(ds);

  std::optional<MethodRun> run;
  if (est != "akw_closed") run = run_method(ds, method, seed);

  const std::string se_kind = cfg.value("se", "matching");
  if (se_kind == "matching") {
    require(run.has_value(), Errc::unsupported, "matching se needs an explicit weight method");
    double se = se_matching(ds, run->sol.weights);
    double z = normal_quantile(1.0 - alpha / 2.0);
    rep.se = se;
    rep.se_method = "matching";
    rep.ci = Interval{rep.tau_hat - z * se, rep.tau_hat + z * se};
  } else if (se_kind == "bootstrap") {
    BootstrapResult br =
        bootstrap_ci(ds, point, cfg.value("bootstrap_b", 200), alpha, derive_seed(seed, 23));
    rep.se_method = "bootstrap";
    rep.ci = br.ci;
  } else {
    require(se_kind == "none", Errc::parse, "se must be matching|bootstrap|none");
  }

  if (cfg.value("partial_id", false)) {
    require(run.has_value(), Errc::unsupported, "partial identification needs a weight method");
    double gamma = 0.0;
    if (cfg.contains("gamma")) {
      gamma = cfg.at("gamma").get<double>();
    } else {
      require(run->hyper.has_value(), Errc::invalid_argument,
              "partial_id needs a tuned scale or an explicit gamma");
      gamma = std::sqrt(run->hyper->gamma2);
    }
    rep.bias_bound = gamma * run->sol.imbalance;
    rep.partial_id = partial_id_interval(rep.tau_hat, gamma, run->sol.imbalance);
    if (rep.se) rep.robust_ci = robust_interval(*rep.partial_id, *rep.se, alpha);
  }
  return rep;
}

Dataset dataset_from_config(const json& cfg, std::uint64_t seed) {
  static const std::set<std::string> known = {"csv", "treatment_col", "outcome_col",
                                              "scenario",  "n",       "tau",
                                              "sigma2"};
  for (const auto& [key, value] : cfg.items())
    require(known.count(key) != 0, Errc::invalid_argument,
            "data config: unknown key '" + key + "'");
  if (cfg.contains("csv")) {
    CsvSchema schema;
    schema.treatment_col = cfg.value("treatment_col", schema.treatment_col);
    schema.outcome_col = cfg.value("outcome_col", schema.outcome_col);
    return load_csv(cfg.at("csv").get<std::string>(), schema);
  }
  SyntheticSpec spec;
  spec.scenario = scenario_from_string(cfg.value("scenario", "example1"));
  spec.n = cfg.value("n", 200);
  spec.tau = cfg.value("tau", 0.0);
  spec.sigma2 = cfg.value("sigma2", -1.0);
  return generate(spec, seed);
}

CoarseningSpec cem_auto_levels(const Dataset& ds, int max_levels) {
  for (int L = max_levels; L >= 2; --L) {
    CoarseningSpec c;
    c.levels = L;
    CoarsenResult r = coarsen(ds, c);
    bool ok = true;
    for (int j = 0; j < r.J; ++j)
      if (r.n1j[j] > 0 && r.n0j[j] == 0) {
        ok = false;
        break;
      }
    if (ok) return c;
  }
  CoarseningSpec c;
  c.levels = 1;
  return c;
}

std::vector<FrontierRow> frontier_sweep(const Dataset& ds, const json& method,
                                        const std::vector<double>& lambdas, std::uint64_t seed) {
  require(!lambdas.empty(), Errc::invalid_argument, "frontier: empty lambda grid");
  bool has_truth = static_cast<bool>(ds.true_f0) && std::isfinite(ds.true_sigma2);

  std::vector<FrontierRow> rows;
  for (double lam : lambdas) {
    json m = method;
    m["lambda"] = lam;
    MethodRun run = run_method(ds, m, seed);
    FrontierRow row;
    row.lambda = lam;
    row.imbalance = run.sol.imbalance;
    row.norm2 = run.sol.weights.w.squaredNorm();
    row.objective = run.sol.objective;
    row.cmse = has_truth ? cmse_oracle(ds, run.sol.weights).cmse : kNan;
    rows.push_back(row);
  }

  // reference point: optimal 1:1 matching evaluated under the sweep's metric
  GomSolution ref = one_to_one(ds);
  BalanceMetric eval_metric;
  const std::string name = method.value("name", "gom");
  if (name == "kom") {
    eval_metric = BalanceMetric::make_rkhs(
        method.contains("kernel") ? kernel_from_json(method.at("kernel")) : KernelSpec{});
  } else if (name == "bvennm") {
    eval_metric = BalanceMetric::make_lipschitz(
        method.contains("distance") ? distance_from_json(method.at("distance")) : MetricSpec{});
  } else if (name == "bvecem") {
    eval_metric = BalanceMetric::make_coarsened(coarsening_from_method(ds, method),
                                                std::numeric_limits<double>::infinity());
  } else if (method.contains("metric")) {
    eval_metric = metric_from_json(method.at("metric"));
  } else {
    eval_metric = BalanceMetric::make_rkhs(KernelSpec{});
  }
  BalanceContext ctx = compile_metric(ds, eval_metric);
  FrontierRow ref_row;
  ref_row.lambda = kNan;
  ref_row.imbalance = imbalance(ctx, ref.weights);
  ref_row.norm2 = ref.weights.w.squaredNorm();
  ref_row.objective = kNan;
  ref_row.cmse = has_truth ? cmse_oracle(ds, ref.weights).cmse : kNan;
  ref_row.label = "one_to_one";
  rows.push_back(ref_row);
  return rows;
}

std::string frontier_csv(const std::vector<FrontierRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "lambda,imbalance,norm2,objective,cmse_if_truth,label\n";
  for (const auto& r : rows)
    out << r.lambda << "," << r.imbalance << "," << r.norm2 << "," << r.objective << "," << r.cmse
        << "," << r.label << "\n";
  return out.str();
}

double Ex5Result::cell(const std::string& method, const std::string& estimator) const {
  for (const auto& c : cells)
    if (c.method == method && c.estimator == estimator) return c.mse;
  fail(Errc::invalid_argument, "benchmark cell not found: " + method + "/" + estimator);
}

namespace {

struct RosterEntry {
  std::string name;
  std::function<GomSolution(const Dataset&, std::uint64_t)> run;
};

std::vector<RosterEntry> ex5_roster() {
  KernelSpec quad;
  quad.family = KernelFamily::polynomial;
  quad.degree = 2;
  KernelSpec gauss;
  gauss.family = KernelFamily::gaussian;

  std::vector<RosterEntry> roster;
  roster.push_back({"kom_pp_quadratic", [quad](const Dataset& ds, std::uint64_t s) {
                      KomPpOptions o;
                      o.tune.seed = s;
                      return kom_pp(ds, quad, WeightSpace::simplex, o).sol;
                    }});
  roster.push_back({"kom_pp_quadratic_ard", [quad](const Dataset& ds, std::uint64_t s) {
                      KomPpOptions o;
                      o.rescale = RescaleKind::diag;
                      o.tune.seed = s;
                      return kom_pp(ds, quad, WeightSpace::simplex, o).sol;
                    }});
  roster.push_back({"kom_pp_gaussian", [gauss](const Dataset& ds, std::uint64_t s) {
                      KomPpOptions o;
                      o.tune.seed = s;
                      return kom_pp(ds, gauss, WeightSpace::simplex, o).sol;
                    }});
  roster.push_back({"ipw", [](const Dataset& ds, std::uint64_t) { return ipw_weights(ds); }});
  roster.push_back({"psm", [](const Dataset& ds, std::uint64_t) { return psm_weights(ds); }});
  roster.push_back({"nnm", [](const Dataset& ds, std::uint64_t) { return nnm(ds); }});
  roster.push_back({"cem", [](const Dataset& ds, std::uint64_t) {
                      return cem(ds, cem_auto_levels(ds));
                    }});
  roster.push_back({"cem_pp", [](const Dataset& ds, std::uint64_t) {
                      return cem_pp(ds, cem_auto_levels(ds));
                    }});
  roster.push_back(
      {"no_matching", [](const Dataset& ds, std::uint64_t) { return uniform_weights(ds); }});
  return roster;
}

const char* kEstimators[3] = {"tau_w", "tau_aw_ols", "tau_wls"};

}  // namespace

Ex5Result benchmark_ex5(int R, std::uint64_t seed, int jobs) {
  require(R >= 2, Errc::invalid_argument, "benchmark: need at least two replications");
  std::vector<RosterEntry> roster = ex5_roster();
  const double satt = 0.0;  // constant-effect design

  struct RepOut {
    std::map<std::string, std::array<double, 3>> err;
    std::vector<std::string> failed;
  };
  std::vector<RepOut> reps(R);

  parallel_for(jobs, R, [&](int r) {
    std::uint64_t rep_seed = derive_seed(seed, static_cast<std::uint64_t>(r));
    SyntheticSpec spec;
    spec.scenario = Scenario::example5;
    spec.n = 500;
    Dataset ds = generate(spec, rep_seed);
    F0Spec f0spec;  // OLS control fit shared by the augmented estimator
    Eigen::VectorXd fhat = fit_f0(ds, f0spec);
    for (const auto& entry : roster) {
      try {
        GomSolution sol = entry.run(ds, derive_seed(rep_seed, 101));
        std::array<double, 3> e{};
        e[0] = tau_w(ds, sol.weights) - satt;
        e[1] = tau_aw(ds, sol.weights, fhat) - satt;
        e[2] = tau_wls(ds, sol.weights) - satt;
        for (double& v : e) v *= v;
        reps[r].err[entry.name] = e;
      } catch (const Error&) {
        reps[r].failed.push_back(entry.name);
      }
    }
  });

  Ex5Result out;
  out.reps = R;
  for (const auto& entry : roster) {
    std::vector<std::vector<double>> sq(3);
    int failures = 0;
    for (const auto& rep : reps) {
      auto it = rep.err.find(entry.name);
      if (it == rep.err.end()) {
        ++failures;
        continue;
      }
      for (int e = 0; e < 3; ++e) sq[e].push_back(it->second[e]);
    }
    for (int e = 0; e < 3; ++e) {
      BenchmarkCell cell;
      cell.method = entry.name;
      cell.estimator = kEstimators[e];
      cell.mse = mean_of(sq[e]);
      cell.mc_se = se_of_mean(sq[e]);
      cell.reps = static_cast<int>(sq[e].size());
      cell.failures = failures;
      out.cells.push_back(cell);
    }
  }
  return out;
}

CoverageResult benchmark_coverage(int R, std::uint64_t seed, int jobs) {
  require(R >= 2, Errc::invalid_argument, "coverage: need at least two redraws");
  const double tau = 1.0;
  SyntheticSpec spec;
  spec.scenario = Scenario::example1;
  spec.n = 200;
  spec.tau = tau;
  Dataset base = generate(spec, derive_seed(seed, 9999));
  KernelSpec gauss;

  std::vector<int> covered(R, -1);  // -1 = failed
  std::vector<double> widths(R, kNan);
  parallel_for(jobs, R, [&](int r) {
    try {
      Dataset ds = base;
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
      redraw_outcomes(ds, base.true_f0, base.true_sigma2, tau, rng);
      KomPpOptions opts;
      opts.tune.seed = derive_seed(seed, 50000 + static_cast<std::uint64_t>(r));
      KomPpResult res = kom_pp(ds, gauss, WeightSpace::simplex, opts);
      double t = tau_w(ds, res.sol.weights);
      double se = se_matching(ds, res.sol.weights);
      double z = normal_quantile(0.975);
      Interval ci{t - z * se, t + z * se};
      covered[r] = ci.contains(tau) ? 1 : 0;
      widths[r] = ci.width();
    } catch (const Error&) {
      covered[r] = -1;
    }
  });

  CoverageResult out;
  out.redraws = R;
  int used = 0, hit = 0;
  std::vector<double> ws;
  for (int r = 0; r < R; ++r) {
    if (covered[r] < 0) {
      ++out.failures;
      continue;
    }
    ++used;
    hit += covered[r];
    ws.push_back(widths[r]);
  }
  require(used > 0, Errc::numeric, "coverage: every redraw failed");
  out.coverage_plain = static_cast<double>(hit) / used;
  out.mean_ci_width = mean_of(ws);
  return out;
}

CoverageResult benchmark_no_overlap(int R, std::uint64_t seed, int jobs) {
  require(R >= 2, Errc::invalid_argument, "coverage: need at least two redraws");
  const double tau = 1.0, sigma2 = 1.0, f0_norm_target = 2.0;
  SyntheticSpec spec;
  spec.scenario = Scenario::no_overlap;
  spec.n = 200;
  spec.tau = tau;
  spec.sigma2 = sigma2;
  Dataset base = generate(spec, derive_seed(seed, 8888));
  KernelSpec gauss;

  // Plant f0 inside the Gaussian kernel's function space with a known norm.
  const int m = 12;
  Eigen::MatrixXd Z = base.X.topRows(std::min(m, base.n()));
  Rng crng(derive_seed(seed, 7777));
  Eigen::VectorXd c(Z.rows());
  for (int i = 0; i < c.size(); ++i) c[i] = crng.normal();
  Eigen::MatrixXd Kzz(Z.rows(), Z.rows());
  for (int i = 0; i < Z.rows(); ++i)
    for (int j = 0; j < Z.rows(); ++j) Kzz(i, j) = kernel_eval(gauss, Z.row(i), Z.row(j));
  double norm0 = std::sqrt(std::max(1e-12, c.dot(Kzz * c)));
  c *= f0_norm_target / norm0;
  auto f0 = [Z, c, gauss](const Eigen::RowVectorXd& x) {
    double v = 0.0;
    for (int j = 0; j < Z.rows(); ++j) v += c[j] * kernel_eval(gauss, x, Z.row(j));
    return v;
  };

  std::vector<int> plain(R, -1), robust(R, -1), given(R, 0);
  std::vector<double> widths(R, kNan);
  parallel_for(jobs, R, [&](int r) {
    try {
      Dataset ds = base;
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
      redraw_outcomes(ds, f0, sigma2, tau, rng);
      KomPpOptions opts;
      opts.tune.seed = derive_seed(seed, 60000 + static_cast<std::uint64_t>(r));
      KomPpResult res = kom_pp(ds, gauss, WeightSpace::simplex, opts);
      double t = tau_w(ds, res.sol.weights);
      double se = se_matching(ds, res.sol.weights);
      double z = normal_quantile(0.975);
      Interval ci{t - z * se, t + z * se};
      double gamma_hat = std::sqrt(res.hyper.gamma2);
      Interval part = partial_id_interval(t, gamma_hat, res.sol.imbalance);
      Interval rob = robust_interval(part, se, 0.05);
      plain[r] = ci.contains(tau) ? 1 : 0;
      robust[r] = rob.contains(tau) ? 1 : 0;
      given[r] = gamma_hat >= f0_norm_target ? 1 : 0;
      widths[r] = ci.width();
    } catch (const Error&) {
      plain[r] = -1;
    }
  });

  CoverageResult out;
  out.redraws = R;
  out.f0_norm = f0_norm_target;
  int used = 0, hit_p = 0, hit_r = 0, n_given = 0, hit_r_given = 0;
  std::vector<double> ws;
  for (int r = 0; r < R; ++r) {
    if (plain[r] < 0) {
      ++out.failures;
      continue;
    }
    ++used;
    hit_p += plain[r];
    hit_r += robust[r];
    if (given[r]) {
      ++n_given;
      hit_r_given += robust[r];
    }
    ws.push_back(widths[r]);
  }
  require(used > 0, Errc::numeric, "coverage: every redraw failed");
  out.coverage_plain = static_cast<double>(hit_p) / used;
  out.coverage_robust = static_cast<double>(hit_r) / used;
  out.given_fraction = static_cast<double>(n_given) / used;
  out.coverage_robust_given = n_given > 0 ? static_cast<double>(hit_r_given) / n_given : kNan;
  out.mean_ci_width = mean_of(ws);
  return out;
}

ConsistencyResult benchmark_consistency(const std::vector<int>& ns, int reps, std::uint64_t seed,
                                        int jobs) {
  require(!ns.empty() && reps >= 1, Errc::invalid_argument, "consistency: bad configuration");
  KernelSpec gauss;
  const double lambda = 1.0;
  const int total = static_cast<int>(ns.size()) * reps;
  std::vector<double> errs(total, kNan);

  parallel_for(jobs, total, [&](int idx) {
    int ni = idx / reps;
    try {
      SyntheticSpec spec;
      spec.scenario = Scenario::example1;
      spec.n = ns[ni];
      Dataset ds = generate(spec, derive_seed(seed, static_cast<std::uint64_t>(idx)));
      GomSolution sol = kom(ds, gauss, WeightSpace::simplex, lambda);
      errs[idx] = std::abs(tau_w(ds, sol.weights));
    } catch (const Error&) {
      // recorded as NaN
    }
  });

  ConsistencyResult out;
  out.ns = ns;
  out.reps_per_n = reps;
  for (size_t ni = 0; ni < ns.size(); ++ni) {
    std::vector<double> v;
    for (int rep = 0; rep < reps; ++rep) {
      double e = errs[ni * reps + rep];
      if (std::isfinite(e)) {
        v.push_back(e);
      } else {
        ++out.failures;
      }
    }
    out.median_abs_err.push_back(median_of(v));
  }
  return out;
}

BenchmarkOutput run_benchmark(const json& cfg, std::uint64_t seed, int jobs) {
  const std::string scenario = cfg.value("scenario", "ex5_table2");
  BenchmarkOutput out;
  std::ostringstream csv;
  csv.precision(12);

  if (scenario == "ex5_table2") {
    Ex5Result res = benchmark_ex5(cfg.value("replications", 100), seed, jobs);
    csv << "method,estimator,mse,mc_se,reps,failures\n";
    json cells = json::array();
    for (const auto& c : res.cells) {
      csv << c.method << "," << c.estimator << "," << c.mse << "," << c.mc_se << "," << c.reps
          << "," << c.failures << "\n";
      cells.push_back({{"method", c.method},
                       {"estimator", c.estimator},
                       {"mse", c.mse},
                       {"mc_se", c.mc_se},
                       {"reps", c.reps},
                       {"failures", c.failures}});
    }
    out.summary = {{"scenario", scenario}, {"replications", res.reps}, {"cells", cells}};
  } else if (scenario == "coverage_ex3" || scenario == "no_overlap_ex4") {
    CoverageResult res = scenario == "coverage_ex3"
                             ? benchmark_coverage(cfg.value("replications", 500), seed, jobs)
                             : benchmark_no_overlap(cfg.value("replications", 500), seed, jobs);
    csv << "key,value\n";
    csv << "coverage_plain," << res.coverage_plain << "\n";
    csv << "coverage_robust," << res.coverage_robust << "\n";
    csv << "coverage_robust_given," << res.coverage_robust_given << "\n";
    csv << "given_fraction," << res.given_fraction << "\n";
    csv << "f0_norm," << res.f0_norm << "\n";
    csv << "mean_ci_width," << res.mean_ci_width << "\n";
    csv << "redraws," << res.redraws << "\n";
    csv << "failures," << res.failures << "\n";
    out.summary = {{"scenario", scenario},
                   {"coverage_plain", res.coverage_plain},
                   {"coverage_robust", res.coverage_robust},
                   {"coverage_robust_given", res.coverage_robust_given},
                   {"given_fraction", res.given_fraction},
                   {"f0_norm", res.f0_norm},
                   {"mean_ci_width", res.mean_ci_width},
                   {"redraws", res.redraws},
                   {"failures", res.failures}};
  } else if (scenario == "ex1") {
    std::vector<int> ns = cfg.value("ns", std::vector<int>{100, 200, 400, 800});
    ConsistencyResult res = benchmark_consistency(ns, cfg.value("replications", 50), seed, jobs);
    csv << "n,median_abs_err,reps,failures\n";
    json rows = json::array();
    for (size_t i = 0; i < res.ns.size(); ++i) {
      csv << res.ns[i] << "," << res.median_abs_err[i] << "," << res.reps_per_n << ","
          << res.failures << "\n";
      rows.push_back({{"n", res.ns[i]}, {"median_abs_err", res.median_abs_err[i]}});
    }
    out.summary = {{"scenario", scenario}, {"rows", rows}, {"reps_per_n", res.reps_per_n}};
  } else {
    fail(Errc::parse, "unknown benchmark scenario: " + scenario);
  }
  out.csv = csv.str();
  return out;
}

}  // namespace gom
