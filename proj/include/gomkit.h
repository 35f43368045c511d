#ifndef GOMKIT_H
#define GOMKIT_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Balance-optimal weighting for causal inference.
 *
 * All configuration goes in as JSON text and all results come back as JSON or
 * CSV text. Returned strings are heap-allocated; release them with
 * gomkit_string_free. Functions report success through the status code; on
 * failure *out_error (when non-NULL) receives a message the caller frees the
 * same way. */

typedef enum {
  GOMKIT_OK = 0,
  GOMKIT_ERROR = 1,      /* bad input, numeric failure, io failure */
  GOMKIT_INFEASIBLE = 2, /* the requested weight problem has no feasible point */
} gomkit_status;

typedef struct gomkit_dataset gomkit_dataset;

/* {"scenario": "example1|example5|no_overlap|ihdp_analog", "n":, "tau":,
 *  "sigma2":} or {"csv": "path", "treatment_col":, "outcome_col":}. */
gomkit_status gomkit_dataset_create(const char* config_json, uint64_t seed, gomkit_dataset** out,
                                    char** out_error);

/* Parse a dataset from CSV text already in memory (same column rules). */
gomkit_status gomkit_dataset_from_csv_text(const char* csv_text, const char* treatment_col,
                                           const char* outcome_col, gomkit_dataset** out,
                                           char** out_error);

void gomkit_dataset_free(gomkit_dataset* ds);

int gomkit_dataset_n(const gomkit_dataset* ds);
int gomkit_dataset_n_treated(const gomkit_dataset* ds);
int gomkit_dataset_n_controls(const gomkit_dataset* ds);
int gomkit_dataset_dim(const gomkit_dataset* ds);

/* Emit the dataset as CSV text (covariates, treatment, outcome columns). */
gomkit_status gomkit_dataset_csv(const gomkit_dataset* ds, char** out_csv, char** out_error);

/* Solve for weights. method_json: {"name": "kom|kom_pp|skom|nnm|one_to_one|
 * bvennm|nnm_pp|ocm|cem|bvecem|cem_pp|omm|omm_lp|gnfb|onfb_pp|
 * regression_as_gom|mixed|gom|ipw|psm|uniform", ...parameters}.
 * Result JSON: weights, imbalance, objective, lambda, diagnostics. */
gomkit_status gomkit_weights(const gomkit_dataset* ds, const char* method_json, uint64_t seed,
                             char** out_json, char** out_error);

/* Point estimate with intervals. config_json: {"method": {...}, "estimator":
 * "tau_w|tau_aw|tau_wls|akw_closed", "se": "matching|bootstrap|none",
 * "alpha":, "partial_id":, "gamma":, "f0": {...}}. */
gomkit_status gomkit_estimate(const gomkit_dataset* ds, const char* config_json, uint64_t seed,
                              char** out_json, char** out_error);

/* Regularization-path sweep. config_json: {"method": {...}, "lambdas": [...]}.
 * Result JSON: {"rows": [...], "csv": "..."} including a matched-pairs
 * reference row. */
gomkit_status gomkit_frontier(const gomkit_dataset* ds, const char* config_json, uint64_t seed,
                              char** out_json, char** out_error);

/* Simulation benchmarks. config_json: {"scenario": "ex5_table2|coverage_ex3|
 * no_overlap_ex4|ex1", "replications":, ...}. Result JSON:
 * {"summary": {...}, "csv": "..."}. */
gomkit_status gomkit_benchmark(const char* config_json, uint64_t seed, int jobs, char** out_json,
                               char** out_error);

const char* gomkit_version(void);

void gomkit_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif /* GOMKIT_H */
