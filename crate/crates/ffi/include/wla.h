#ifndef WLA_H
#define WLA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Bumped on any incompatible change to the functions below.
 */
#define WLA_ABI_VERSION 1

/**
 * Result codes.
 */
typedef enum WlaStatus {
  WLA_STATUS_OK = 0,
  WLA_STATUS_NULL_POINTER = 1,
  WLA_STATUS_INVALID_UTF8 = 2,
  WLA_STATUS_INVALID_ARGUMENT = 3,
  WLA_STATUS_CONTRACT_VIOLATION = 4,
  WLA_STATUS_INVALID_CONFIG = 5,
  WLA_STATUS_NUMERICAL = 6,
  WLA_STATUS_PARSE = 7,
  WLA_STATUS_UNKNOWN_PRESET = 8,
  WLA_STATUS_IO = 9,
  WLA_STATUS_EXPORT = 10,
  /**
   * The result has no data of the requested kind.
   */
  WLA_STATUS_WRONG_KIND = 11,
  WLA_STATUS_OUT_OF_RANGE = 12,
  /**
   * The caller's buffer is too small; the needed size was written back.
   */
  WLA_STATUS_BUFFER_TOO_SMALL = 13,
  WLA_STATUS_PANIC = 14,
} WlaStatus;

/**
 * Experiment family of a config or result.
 */
typedef enum WlaKind {
  WLA_KIND_CONSENSUS = 0,
  WLA_KIND_SWEEP = 1,
  WLA_KIND_CLOCK = 2,
} WlaKind;

/**
 * Which weight matrix to read from a result.
 */
typedef enum WlaWeights {
  /**
   * Consensus weights.
   */
  WLA_WEIGHTS_CONSENSUS = 0,
  /**
   * Clock skew weights.
   */
  WLA_WEIGHTS_SKEW = 1,
  /**
   * Clock offset weights.
   */
  WLA_WEIGHTS_OFFSET = 2,
} WlaWeights;

/**
 * A parsed, validated experiment.
 */
typedef struct WlaExperiment WlaExperiment;

/**
 * The outcome of running a [`WlaExperiment`].
 */
typedef struct WlaResult WlaResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns [`WLA_ABI_VERSION`].
 */
uint32_t wla_abi_version(void);

/**
 * Message for the last failing call on this thread; empty after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *wla_last_error(void);

/**
 * Parses and validates a TOML experiment config.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum WlaStatus wla_experiment_from_toml(const char *toml, struct WlaExperiment **out);

/**
 * Loads a shipped preset by name.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum WlaStatus wla_experiment_from_preset(const char *name, struct WlaExperiment **out);

/**
 * # Safety
 * `exp` must come from this library and not be freed; `out` must be writable.
 */
enum WlaStatus wla_experiment_kind(const struct WlaExperiment *exp, enum WlaKind *out);

/**
 * Replaces the master seed.
 *
 * # Safety
 * `exp` must come from this library and not be freed.
 */
enum WlaStatus wla_experiment_set_seed(struct WlaExperiment *exp, uint64_t seed);

/**
 * Normalized TOML of the experiment. Writes at most `cap` bytes including
 * the terminating NUL and stores the full size (with NUL) in `needed`.
 *
 * # Safety
 * `buf` must hold `cap` bytes (it may be null when `cap` is 0); `needed` must be writable.
 */
enum WlaStatus wla_experiment_to_toml(const struct WlaExperiment *exp,
                                      char *buf,
                                      size_t cap,
                                      size_t *needed);

/**
 * # Safety
 * `exp` must be null or come from this library; it is invalid afterwards.
 */
void wla_experiment_free(struct WlaExperiment *exp);

/**
 * Runs the experiment in memory. `jobs` bounds worker threads (0 = all cores).
 *
 * # Safety
 * `exp` must come from this library; `out` must be writable.
 */
enum WlaStatus wla_experiment_run(const struct WlaExperiment *exp,
                                  size_t jobs,
                                  struct WlaResult **out);

/**
 * Runs the experiment and writes its exports and `manifest.json` to `dir`.
 * The 64-character hex outputs digest plus NUL goes to `digest_out`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `digest_out` must be null or hold 65 bytes.
 */
enum WlaStatus wla_experiment_run_to_dir(const struct WlaExperiment *exp,
                                         const char *dir,
                                         size_t jobs,
                                         char *digest_out);

/**
 * # Safety
 * `res` must be null or come from this library; it is invalid afterwards.
 */
void wla_result_free(struct WlaResult *res);

/**
 * # Safety
 * `res` must come from this library; `out` must be writable.
 */
enum WlaStatus wla_result_kind(const struct WlaResult *res, enum WlaKind *out);

/**
 * Disagreement `V(x(k))` for `k = 0..=max_iter` of replica 0. The array is
 * owned by `res`.
 *
 * # Safety
 * `res` must come from this library; `data` and `len` must be writable.
 */
enum WlaStatus wla_result_disagreement(const struct WlaResult *res,
                                       const double **data,
                                       size_t *len);

/**
 * Final state of replica 0, one value per node. Owned by `res`.
 *
 * # Safety
 * `res` must come from this library; `data` and `len` must be writable.
 */
enum WlaStatus wla_result_final_state(const struct WlaResult *res,
                                      const double **data,
                                      size_t *len);

/**
 * First step at which replica 0's disagreement is below `threshold`, or
 * `max_iter` if it never is.
 *
 * # Safety
 * `res` must come from this library; `out` must be writable.
 */
enum WlaStatus wla_result_convergence_count(const struct WlaResult *res,
                                            double threshold,
                                            size_t *out);

/**
 * # Safety
 * `res` must come from this library; `out` must be writable.
 */
enum WlaStatus wla_result_replica_count(const struct WlaResult *res, size_t *out);

/**
 * Summary of replica `index`. Any output pointer may be null.
 *
 * # Safety
 * `res` must come from this library; non-null outputs must be writable.
 */
enum WlaStatus wla_result_replica(const struct WlaResult *res,
                                  size_t index,
                                  size_t *convergence_count,
                                  bool *converged,
                                  double *final_disagreement);

/**
 * # Safety
 * `res` must come from this library; `out` must be writable.
 */
enum WlaStatus wla_result_sweep_len(const struct WlaResult *res, size_t *out);

/**
 * Fault probability and mean convergence count of sweep point `index`.
 *
 * # Safety
 * `res` must come from this library; `fault_prob` and `mean_count` must be writable.
 */
enum WlaStatus wla_result_sweep_point(const struct WlaResult *res,
                                      size_t index,
                                      double *fault_prob,
                                      double *mean_count);

/**
 * Clock disagreement as `len / 3` consecutive `(dx', dx'', dtau)` triples,
 * one per round starting at 0. Owned by `res`.
 *
 * # Safety
 * `res` must come from this library; `data` and `len` must be writable.
 */
enum WlaStatus wla_result_clock_disagreement(const struct WlaResult *res,
                                             const double **data,
                                             size_t *len);

/**
 * Copies the `n x n` weight matrix exported at step `k` into `out`,
 * row-major with `out[i * n + j] = a_ij`. `n` is written to `n_out`.
 *
 * # Safety
 * `res` must come from this library; `out` must hold `cap` doubles; `n_out` must be writable.
 */
enum WlaStatus wla_result_weights(const struct WlaResult *res,
                                  enum WlaWeights which,
                                  size_t k,
                                  double *out,
                                  size_t cap,
                                  size_t *n_out);

/**
 * Disagreement `sqrt(2 Σ (x_i - mean)^2 / (n - 1))` of `n >= 1` values (0 for one value).
 *
 * # Safety
 * `x` must point to `n` doubles; `out` must be writable.
 */
enum WlaStatus wla_disagreement(const double *x, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WLA_H */
