#include "core/serialize.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "core/error.hpp"

namespace gom {

using nlohmann::json;

json number_or_string(double v) {
  if (std::isfinite(v)) return v;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return "nan";
}

namespace {

std::string space_name(WeightSpace s) {
  switch (s) {
    case WeightSpace::simplex: return "simplex";
    case WeightSpace::b_simplex: return "b_simplex";
    case WeightSpace::subset: return "subset";
    case WeightSpace::multisubset: return "multisubset";
    case WeightSpace::general: return "general";
  }
  return "?";
}

json interval_json(const Interval& iv) { return json::array({iv.lo, iv.hi}); }

}  // namespace

json solution_json(const GomSolution& sol) {
  json j;
  j["status"] = sol.status;
  j["space"] = space_name(sol.weights.space);
  j["b"] = sol.weights.b;
  j["subset_size"] = sol.weights.subset_size;
  j["lambda"] = number_or_string(sol.lambda);
  j["imbalance"] = number_or_string(sol.imbalance);
  j["variance_term"] = number_or_string(sol.variance_term);
  j["objective"] = number_or_string(sol.objective);
  if (!sol.note.empty()) j["note"] = sol.note;
  json diag = json::object();
  for (const auto& [k, v] : sol.diag) diag[k] = number_or_string(v);
  j["diagnostics"] = diag;
  j["weights"] = std::vector<double>(sol.weights.w.data(), sol.weights.w.data() + sol.weights.w.size());
  return j;
}

json report_json(const EstimateReport& rep) {
  json j;
  j["tau_hat"] = rep.tau_hat;
  j["estimator"] = rep.estimator;
  j["alpha"] = rep.alpha;
  if (rep.se) {
    j["se"] = *rep.se;
    j["se_method"] = rep.se_method;
  }
  if (rep.ci) j["ci"] = interval_json(*rep.ci);
  if (rep.bias_bound) j["bias_bound"] = *rep.bias_bound;
  if (rep.partial_id) j["partial_id"] = interval_json(*rep.partial_id);
  if (rep.robust_ci) j["robust_ci"] = interval_json(*rep.robust_ci);
  return j;
}

json hyper_json(const GpHyper& h) {
  json j;
  j["theta"] = std::vector<double>(h.theta.data(), h.theta.data() + h.theta.size());
  j["gamma2"] = h.gamma2;
  j["sigma2"] = h.sigma2;
  j["lambda_hat"] = h.lambda_hat;
  j["nll"] = h.nll;
  j["restarts_used"] = h.restarts_used;
  if (!h.warning.empty()) j["warning"] = h.warning;
  return j;
}

json epbr_json(const EpbrReport& rep) {
  json j;
  j["alpha_hat"] = rep.alpha_hat;
  j["alpha_se"] = rep.alpha_se;
  j["off_axis_norm"] = rep.off_axis_norm;
  j["mc_se"] = rep.mc_se;
  j["pass"] = rep.pass;
  return j;
}

std::string weights_csv(const Dataset& ds, const GomSolution& sol) {
  std::ostringstream out;
  out.precision(17);
  out << "unit_id,weight\n";
  Eigen::VectorXd full = Eigen::VectorXd::Zero(ds.n());
  for (int i : ds.treated) full[i] = 1.0 / ds.n1();
  for (int j = 0; j < ds.n0(); ++j) full[ds.controls[j]] = sol.weights.w[j];
  for (int i = 0; i < ds.n(); ++i) out << i << "," << full[i] << "\n";
  return out.str();
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io, "cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), Errc::io, "cannot open for writing: " + path);
  out << content;
  require(out.good(), Errc::io, "write failed: " + path);
}

json parse_json(const std::string& text, const std::string& what) {
  json j = json::parse(text, nullptr, false);
  require(!j.is_discarded(), Errc::parse, "invalid JSON in " + what);
  return j;
}

}  // namespace gom
