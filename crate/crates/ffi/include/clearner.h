#ifndef CLEARNER_H
#define CLEARNER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible entry point.
 */
typedef enum ClearnerStatus {
  CLEARNER_STATUS_OK = 0,
  CLEARNER_STATUS_NULL_POINTER = 1,
  CLEARNER_STATUS_INVALID_INPUT = 2,
  CLEARNER_STATUS_CONFIG = 3,
  CLEARNER_STATUS_NUMERICAL = 4,
  CLEARNER_STATUS_IO = 5,
  CLEARNER_STATUS_PANIC = 6,
} ClearnerStatus;

/**
 * Opaque dataset handle.
 */
typedef struct ClearnerDataset ClearnerDataset;

/**
 * Estimation options. `truncation <= 0` disables propensity clipping and
 * `folds < 2` uses a single split.
 */
typedef struct ClearnerOptions {
  uint32_t folds;
  double truncation;
  bool intercept;
  uint64_t seed;
} ClearnerOptions;

typedef struct ClearnerEstimate {
  double psi_hat;
  double variance;
  double ci_low;
  double ci_high;
  double min_pi;
  /**
   * Largest relative constraint residual, NaN for unconstrained recipes.
   */
  double max_residual;
} ClearnerEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *clearner_last_error(void);

struct ClearnerOptions clearner_options_default(void);

/**
 * Builds a dataset from row-major covariates `x` (`n * d` values),
 * treatment flags `a` (nonzero = treated) and outcomes `y`. Outcomes of
 * untreated rows are ignored and may be NaN.
 *
 * # Safety
 * `x` must point to `n * d` doubles, `a` and `y` to `n` elements each, and
 * `out` to writable storage for one pointer.
 */
enum ClearnerStatus clearner_dataset_new(const double *x,
                                         size_t n,
                                         size_t d,
                                         const uint8_t *a,
                                         const double *y,
                                         struct ClearnerDataset **out);

/**
 * Loads a dataset CSV with columns `x1..xd`, `a`, `y` and optional `pi`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum ClearnerStatus clearner_dataset_load_csv(const char *path, struct ClearnerDataset **out);

/**
 * Draws a Kang-Schafer dataset with overlap scaling `c`.
 *
 * # Safety
 * `out` must be writable.
 */
enum ClearnerStatus clearner_dataset_simulate(size_t n,
                                              double c,
                                              bool misspecified,
                                              uint64_t seed,
                                              struct ClearnerDataset **out);

/**
 * Number of rows, 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t clearner_dataset_rows(const struct ClearnerDataset *ds);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void clearner_dataset_free(struct ClearnerDataset *ds);

/**
 * Estimates the mean of the treated-arm outcome with `recipe`
 * (e.g. `"aipw"`, `"clearner_linear"`) using linear and logistic nuisances.
 *
 * # Safety
 * `ds` must be a live handle, `recipe` a NUL-terminated string, `opts`
 * null (defaults) or valid, and `out` writable.
 */
enum ClearnerStatus clearner_estimate(const struct ClearnerDataset *ds,
                                      const char *recipe,
                                      const struct ClearnerOptions *opts,
                                      struct ClearnerEstimate *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLEARNER_H */
