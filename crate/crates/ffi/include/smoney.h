#ifndef SMONEY_H
#define SMONEY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SmoneyStatus {
  SMONEY_STATUS_OK = 0,
  SMONEY_STATUS_NULL_POINTER = 1,
  SMONEY_STATUS_INVALID_ARGUMENT = 2,
  SMONEY_STATUS_PARSE = 3,
  SMONEY_STATUS_CONSTRAINT_VIOLATED = 4,
  SMONEY_STATUS_INTERNAL = 5,
} SmoneyStatus;

/**
 * Opaque parameter set.
 */
typedef struct SmoneyParams SmoneyParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread (empty if none).
 * The pointer stays valid until the next failing call on this thread.
 */
const char *smoney_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *smoney_version(void);

/**
 * Parse a run configuration (JSON with a `params` block and optional `free` block).
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum SmoneyStatus smoney_params_from_json(const char *json, struct SmoneyParams **out);

/**
 * Parameters of the reported experiment.
 */
struct SmoneyParams *smoney_params_experiment(void);

/**
 * # Safety
 * `params` must come from this library and not be used afterwards. Null is ignored.
 */
void smoney_params_free(struct SmoneyParams *params);

/**
 * Natural log of the robustness bound.
 *
 * # Safety
 * `params` must be a live handle and `out_ln` a valid pointer.
 */
enum SmoneyStatus smoney_epsilon_rob_ln(const struct SmoneyParams *params, double *out_ln);

/**
 * Full bound report as JSON. Returns `ConstraintViolated` (with the report
 * still written) when any inequality fails.
 *
 * # Safety
 * `params` must be a live handle carrying free variables; `out_json` a valid pointer.
 */
enum SmoneyStatus smoney_bounds_report_json(const struct SmoneyParams *params, char **out_json);

/**
 * Single-qubit distinguishability bound for misalignment `theta_deg` and basis bias `beta_pb`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SmoneyStatus smoney_lambda_bound(double theta_deg, double beta_pb, double *out);

/**
 * Exact maximum forging-operator norm for the ideal BB84 ensemble on `n` qubits.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SmoneyStatus smoney_oracle_ideal_norm(uint32_t n, double gamma_err, double *out);

/**
 * Parameter estimates from a count-table JSON object, returned as JSON.
 *
 * # Safety
 * `counts_json` must be a NUL-terminated string and `out_json` a valid pointer.
 */
enum SmoneyStatus smoney_estimate_stats_json(const char *counts_json, char **out_json);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards. Null is ignored.
 */
void smoney_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SMONEY_H */
