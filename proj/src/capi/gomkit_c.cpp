#include "gomkit.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "core/dataset.hpp"
#include "core/error.hpp"
#include "core/runner.hpp"
#include "core/serialize.hpp"

using nlohmann::json;

struct gomkit_dataset {
  gom::Dataset ds;
};

namespace {

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) return nullptr;
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void set_error(char** out_error, const std::string& msg) {
  if (out_error) *out_error = dup_string(msg);
}

// Single exception boundary: core exceptions map onto the status codes, and
// nothing may propagate across the C surface.
template <class Fn>
gomkit_status guarded(char** out_error, Fn&& fn) {
  if (out_error) *out_error = nullptr;
  try {
    fn();
    return GOMKIT_OK;
  } catch (const gom::Error& e) {
    set_error(out_error, e.what());
    return e.code() == gom::Errc::infeasible ? GOMKIT_INFEASIBLE : GOMKIT_ERROR;
  } catch (const std::exception& e) {
    set_error(out_error, e.what());
    return GOMKIT_ERROR;
  } catch (...) {
    set_error(out_error, "unknown failure");
    return GOMKIT_ERROR;
  }
}

json parse_cfg(const char* text, const char* what) {
  gom::require(text != nullptr, gom::Errc::invalid_argument,
               std::string(what) + ": null config");
  return gom::parse_json(text, what);
}

}  // namespace

extern "C" {

gomkit_status gomkit_dataset_create(const char* config_json, uint64_t seed, gomkit_dataset** out,
                                    char** out_error) {
  return guarded(out_error, [&] {
    gom::require(out != nullptr, gom::Errc::invalid_argument, "dataset_create: null output");
    json cfg = parse_cfg(config_json, "dataset config");
    auto* handle = new gomkit_dataset{gom::dataset_from_config(cfg, seed)};
    *out = handle;
  });
}

gomkit_status gomkit_dataset_from_csv_text(const char* csv_text, const char* treatment_col,
                                           const char* outcome_col, gomkit_dataset** out,
                                           char** out_error) {
  return guarded(out_error, [&] {
    gom::require(out != nullptr && csv_text != nullptr, gom::Errc::invalid_argument,
                 "dataset_from_csv_text: null argument");
    gom::CsvSchema schema;
    if (treatment_col) schema.treatment_col = treatment_col;
    schema.outcome_col = outcome_col ? outcome_col : "";
    auto* handle = new gomkit_dataset{gom::parse_csv_text(csv_text, schema)};
    *out = handle;
  });
}

void gomkit_dataset_free(gomkit_dataset* ds) { delete ds; }

int gomkit_dataset_n(const gomkit_dataset* ds) { return ds ? ds->ds.n() : 0; }
int gomkit_dataset_n_treated(const gomkit_dataset* ds) { return ds ? ds->ds.n1() : 0; }
int gomkit_dataset_n_controls(const gomkit_dataset* ds) { return ds ? ds->ds.n0() : 0; }
int gomkit_dataset_dim(const gomkit_dataset* ds) { return ds ? ds->ds.d() : 0; }

gomkit_status gomkit_dataset_csv(const gomkit_dataset* ds, char** out_csv, char** out_error) {
  return guarded(out_error, [&] {
    gom::require(ds != nullptr && out_csv != nullptr, gom::Errc::invalid_argument,
                 "dataset_csv: null argument");
    *out_csv = dup_string(gom::csv_text(ds->ds));
  });
}

gomkit_status gomkit_weights(const gomkit_dataset* ds, const char* method_json, uint64_t seed,
                             char** out_json, char** out_error) {
  return guarded(out_error, [&] {
    gom::require(ds != nullptr && out_json != nullptr, gom::Errc::invalid_argument,
                 "weights: null argument");
    json method = parse_cfg(method_json, "method config");
    gom::MethodRun run = gom::run_method(ds->ds, method, seed);
    json out = gom::solution_json(run.sol);
    out["method"] = run.name;
    if (run.hyper) out["hyper"] = gom::hyper_json(*run.hyper);
    out["weights_csv"] = gom::weights_csv(ds->ds, run.sol);
    *out_json = dup_string(out.dump(2));
  });
}

gomkit_status gomkit_estimate(const gomkit_dataset* ds, const char* config_json, uint64_t seed,
                              char** out_json, char** out_error) {
  return guarded(out_error, [&] {
    gom::require(ds != nullptr && out_json != nullptr, gom::Errc::invalid_argument,
                 "estimate: null argument");
    json cfg = parse_cfg(config_json, "estimate config");
    gom::EstimateReport rep = gom::estimate_from_config(ds->ds, cfg, seed);
    *out_json = dup_string(gom::report_json(rep).dump(2));
  });
}

gomkit_status gomkit_frontier(const gomkit_dataset* ds, const char* config_json, uint64_t seed,
                              char** out_json, char** out_error) {
  return guarded(out_error, [&] {
    gom::require(ds != nullptr && out_json != nullptr, gom::Errc::invalid_argument,
                 "frontier: null argument");
    json cfg = parse_cfg(config_json, "frontier config");
    gom::require(cfg.contains("lambdas"), gom::Errc::parse, "frontier: lambdas array required");
    std::vector<double> lambdas;
    for (const auto& l : cfg.at("lambdas")) lambdas.push_back(gom::lambda_from_json(l));
    json method = cfg.contains("method") ? cfg.at("method") : json{{"name", "kom"}};
    auto rows = gom::frontier_sweep(ds->ds, method, lambdas, seed);
    json jr = json::array();
    for (const auto& r : rows) {
      jr.push_back({{"lambda", gom::number_or_string(r.lambda)},
                    {"imbalance", gom::number_or_string(r.imbalance)},
                    {"norm2", r.norm2},
                    {"objective", gom::number_or_string(r.objective)},
                    {"cmse_if_truth", gom::number_or_string(r.cmse)},
                    {"label", r.label}});
    }
    json out = {{"rows", jr}, {"csv", gom::frontier_csv(rows)}};
    *out_json = dup_string(out.dump(2));
  });
}

gomkit_status gomkit_benchmark(const char* config_json, uint64_t seed, int jobs, char** out_json,
                               char** out_error) {
  return guarded(out_error, [&] {
    gom::require(out_json != nullptr, gom::Errc::invalid_argument, "benchmark: null output");
    json cfg = parse_cfg(config_json, "benchmark config");
    gom::BenchmarkOutput res = gom::run_benchmark(cfg, seed, jobs);
    json out = {{"summary", res.summary}, {"csv", res.csv}};
    *out_json = dup_string(out.dump(2));
  });
}

const char* gomkit_version(void) { return "0.1.0"; }

void gomkit_string_free(char* s) { std::free(s); }

}  // extern "C"
