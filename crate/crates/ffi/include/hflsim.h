/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef HFLSIM_H
#define HFLSIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum HflStatus {
  HFL_STATUS_OK = 0,
  HFL_STATUS_NULL_POINTER = 1,
  HFL_STATUS_INVALID_UTF8 = 2,
  HFL_STATUS_PARSE_ERROR = 3,
  HFL_STATUS_VALIDATION_ERROR = 4,
  HFL_STATUS_RUNTIME_ERROR = 5,
  HFL_STATUS_IO_ERROR = 6,
  HFL_STATUS_INVALID_ARGUMENT = 7,
} HflStatus;

typedef enum HflStopReason {
  HFL_STOP_REASON_BUDGET_EXHAUSTED = 0,
  HFL_STOP_REASON_HORIZON_REACHED = 1,
  HFL_STOP_REASON_CONVERGED = 2,
} HflStopReason;

// Values accepted by the `mode` argument of [`hfl_run`].
typedef enum HflRvaMode {
  HFL_RVA_MODE_ON = 0,
  HFL_RVA_MODE_OFF = 1,
  HFL_RVA_MODE_FORCE_REVERT = 2,
} HflRvaMode;

// Values accepted by the `kind` argument of [`hfl_fit_regression`].
typedef enum HflRegressionKind {
  HFL_REGRESSION_KIND_LOGARITHMIC = 0,
  HFL_REGRESSION_KIND_LINEAR = 1,
} HflRegressionKind;

// Completed simulation run.
typedef struct HflRun HflRun;

// Loaded, validated scenario.
typedef struct HflScenario HflScenario;

typedef struct HflRunSummary {
  uint32_t final_round;
  double final_accuracy;
  double total_cost;
  double budget;
  enum HflStopReason stop_reason;
  uint32_t reverts;
  uint32_t keeps;
} HflRunSummary;

typedef struct HflRegression {
  double a;
  double b;
} HflRegression;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads and validates a scenario file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum HflStatus hfl_scenario_load(const char *path, struct HflScenario **out);

// Parses and validates scenario text.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be writable.
enum HflStatus hfl_scenario_from_str(const char *text, struct HflScenario **out);

// Replaces the scenario seed, including learner and training seeds.
//
// # Safety
// `scenario` must come from this library and not yet be freed.
enum HflStatus hfl_scenario_set_seed(struct HflScenario *scenario, uint64_t seed);

// Frees a scenario. Null is ignored.
//
// # Safety
// `scenario` must come from this library and not be used afterwards.
void hfl_scenario_free(struct HflScenario *scenario);

// Runs a scenario. `mode` is one of the [`HflRvaMode`] values.
//
// # Safety
// `scenario` must be a live handle; `out` must be writable.
enum HflStatus hfl_run(const struct HflScenario *scenario, int32_t mode, struct HflRun **out);

// Frees a run. Null is ignored.
//
// # Safety
// `run` must come from this library and not be used afterwards.
void hfl_run_free(struct HflRun *run);

// # Safety
// `run` must be a live handle; `out` must be writable.
enum HflStatus hfl_run_summary(const struct HflRun *run, struct HflRunSummary *out);

// Number of recorded rounds; 0 for a null handle.
//
// # Safety
// `run` must be null or a live handle.
size_t hfl_run_trace_len(const struct HflRun *run);

// Round number and accuracy of trace entry `index`.
//
// # Safety
// `run` must be a live handle; both outputs must be writable.
enum HflStatus hfl_run_trace_get(const struct HflRun *run,
                                 size_t index,
                                 uint32_t *out_round,
                                 double *out_accuracy);

// Writes trace, ledger, decisions, summary and report files into `dir`.
//
// # Safety
// `run` must be a live handle; `dir` a NUL-terminated string.
enum HflStatus hfl_run_write_outputs(const struct HflRun *run, const char *dir);

// Predicted final round `current + (remaining - revert_cost) / per_round`.
//
// # Safety
// `out` must be writable.
enum HflStatus hfl_final_round(uint32_t current_round,
                               double remaining_budget,
                               double revert_cost,
                               double per_round_cost,
                               double *out);

// Least-squares fit of `accuracies` against `rounds`. `kind` is one of
// the [`HflRegressionKind`] values.
//
// # Safety
// `rounds` and `accuracies` must each hold `len` elements; `out` must be
// writable.
enum HflStatus hfl_fit_regression(const uint32_t *rounds,
                                  const double *accuracies,
                                  size_t len,
                                  int32_t kind,
                                  struct HflRegression *out);

// Message for the last failed call on this thread, or an empty string.
// Valid until the next call into this library from the same thread.
const char *hfl_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *hfl_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HFLSIM_H */
