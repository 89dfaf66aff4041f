#ifndef HONEYNET_SMDP_H
#define HONEYNET_SMDP_H

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/* Returned by the role queries when the scenario has no such state. */
#define HP_NO_STATE SIZE_MAX

#define HP_ACTION_EJECT 0

#define HP_ACTION_PASSIVE 1

#define HP_ACTION_LOW_INTERACT 2

#define HP_ACTION_HIGH_INTERACT 3

#define HP_ACTION_ATTRACT 4



typedef enum {
  HP_STATUS_OK = 0,
  HP_STATUS_NULL_POINTER = 1,
  HP_STATUS_INVALID_UTF8 = 2,
  /**
   * Scenario failed to parse or validate.
   */
  HP_STATUS_INVALID_MODEL = 3,
  HP_STATUS_INVALID_ARGUMENT = 4,
  /**
   * Output buffer length does not match the state count.
   */
  HP_STATUS_BUFFER_SIZE = 5,
  HP_STATUS_NON_CONVERGENCE = 6,
  HP_STATUS_SINGULAR = 7,
  HP_STATUS_UNREACHABLE = 8,
  HP_STATUS_PANIC = 9,
} HpStatus;

/**
 * A validated scenario.
 */
typedef struct HpModel HpModel;

/**
 * Result of value iteration.
 */
typedef struct HpSolution HpSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hp_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated and
 * always NUL-terminated when `len > 0`). Returns the full message length
 * excluding the terminator; `buf` may be null to query it.
 */
size_t hp_last_error_message(char *buf, size_t len);

/**
 * Parses and validates a scenario document. On success `*out` owns a new
 * handle to release with [`hp_model_free`].
 */
HpStatus hp_model_from_json(const char *json, HpModel **out);

void hp_model_free(HpModel *model);

/**
 * Number of states, or 0 for a null handle.
 */
size_t hp_model_state_count(const HpModel *model);

/**
 * Index of the normal zone, or [`HP_NO_STATE`].
 */
size_t hp_model_normal(const HpModel *model);

/**
 * Index of the scenario's target honeypot, or [`HP_NO_STATE`].
 */
size_t hp_model_target(const HpModel *model);

/**
 * Index of the absorbing state, or [`HP_NO_STATE`] for a null handle.
 */
size_t hp_model_absorbing(const HpModel *model);

/**
 * Value iteration to Bellman residual `tol`. On success `*out` owns a new
 * solution handle to release with [`hp_solution_free`].
 */
HpStatus hp_solve(const HpModel *model, double tol, size_t max_iter, HpSolution **out);

void hp_solution_free(HpSolution *solution);

/**
 * Copies the optimal values; `len` must equal the state count.
 */
HpStatus hp_solution_values(const HpSolution *solution, double *out, size_t len);

/**
 * Copies the optimal action codes; `len` must equal the state count.
 */
HpStatus hp_solution_policy(const HpSolution *solution, uint8_t *out, size_t len);

/**
 * Sweeps performed, or 0 for a null handle.
 */
size_t hp_solution_iterations(const HpSolution *solution);

/**
 * Sup-norm Bellman residual of the returned values, NaN for a null handle.
 */
double hp_solution_residual(const HpSolution *solution);

/**
 * Exact discounted value of a stationary policy.
 */
HpStatus hp_policy_evaluate(const HpModel *model,
                            const uint8_t *actions,
                            size_t actions_len,
                            double *out,
                            size_t len);

/**
 * Occupancy distribution at time `t` from a point mass on `start`.
 */
HpStatus hp_occupancy(const HpModel *model,
                      const uint8_t *actions,
                      size_t actions_len,
                      size_t start,
                      double t,
                      double *out,
                      size_t len);

/**
 * Mean first-passage time from every state into `target`. Entries are
 * `INFINITY` where passage is not certain.
 */
HpStatus hp_mfpt(const HpModel *model,
                 const uint8_t *actions,
                 size_t actions_len,
                 size_t target,
                 double *out,
                 size_t len);

/**
 * Probability that the first passage from `source` to `target` finishes
 * within its mean, together with that mean.
 */
HpStatus hp_attraction_efficiency(const HpModel *model,
                                  const uint8_t *actions,
                                  size_t actions_len,
                                  size_t source,
                                  size_t target,
                                  double *threshold,
                                  double *probability);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HONEYNET_SMDP_H */
