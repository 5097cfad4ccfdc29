#ifndef BSCCS_H
#define BSCCS_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  BSCCS_STATUS_OK = 0,
  BSCCS_STATUS_NULL_POINTER = 1,
  BSCCS_STATUS_INVALID_INPUT = 2,
  BSCCS_STATUS_IO = 3,
  /**
   * Overflow or an undefined Newton step.
   */
  BSCCS_STATUS_NUMERICAL = 4,
  /**
   * An internal consistency check failed.
   */
  BSCCS_STATUS_INTERNAL = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  BSCCS_STATUS_PANIC = 6,
  BSCCS_STATUS_BUFFER_TOO_SMALL = 7,
} BsccsStatus;

typedef enum {
  BSCCS_PRIOR_NORMAL = 0,
  BSCCS_PRIOR_LAPLACE = 1,
  BSCCS_PRIOR_NONE = 2,
} BsccsPrior;

typedef enum {
  BSCCS_CONVERGENCE_RAW_SUM = 0,
  BSCCS_CONVERGENCE_NORMALIZED = 1,
} BsccsConvergence;

typedef enum {
  BSCCS_PRECISION_DOUBLE = 0,
  BSCCS_PRECISION_SINGLE = 1,
} BsccsPrecision;

/**
 * Opaque dataset handle.
 */
typedef struct BsccsDataset BsccsDataset;

/**
 * Opaque fit result handle.
 */
typedef struct BsccsFit BsccsFit;

/**
 * Fit settings. Obtain defaults from [`bsccs_fit_options_default`].
 */
typedef struct {
  BsccsPrior prior;
  /**
   * Prior variance; the Laplace scale when `laplace_scale_param` is set.
   */
  double variance;
  bool laplace_scale_param;
  double epsilon;
  size_t max_cycles;
  BsccsConvergence convergence;
  BsccsPrecision precision;
  size_t partitions;
} BsccsFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *bsccs_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *bsccs_version(void);

/**
 * # Safety
 * `out` must be a valid pointer to writable memory.
 */
BsccsStatus bsccs_fit_options_default(BsccsFitOptions *out);

/**
 * Reads a long-format era file. `dictionary` may be null.
 *
 * # Safety
 * `path` and a non-null `dictionary` must be NUL-terminated strings; `out`
 * must be writable.
 */
BsccsStatus bsccs_dataset_read(const char *path, const char *dictionary, BsccsDataset **out);

/**
 * Builds a dataset from flat arrays.
 *
 * Subject `i` owns rows `subject_offsets[i] .. subject_offsets[i + 1]`;
 * row `k` has `lengths[k]` days, `events[k]` events and the drug indices
 * `exposures[exposure_offsets[k] .. exposure_offsets[k + 1]]`. Subjects
 * without events are excluded, as for file input.
 *
 * # Safety
 * Every array must hold the stated number of elements; `out` must be
 * writable.
 */
BsccsStatus bsccs_dataset_from_arrays(size_t num_subjects,
                                      const size_t *subject_offsets,
                                      size_t num_rows,
                                      const int64_t *lengths,
                                      const uint32_t *events,
                                      const size_t *exposure_offsets,
                                      const uint32_t *exposures,
                                      size_t num_drugs,
                                      BsccsDataset **out);

/**
 * # Safety
 * `ds` must be null or a handle from this library not yet freed.
 */
void bsccs_dataset_free(BsccsDataset *ds);

/**
 * Number of subjects kept, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t bsccs_dataset_num_subjects(const BsccsDataset *ds);

/**
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t bsccs_dataset_num_drugs(const BsccsDataset *ds);

/**
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t bsccs_dataset_num_rows(const BsccsDataset *ds);

/**
 * Fits the MAP estimate. `init_beta` may be null (zeros); otherwise it holds
 * one value per drug.
 *
 * # Safety
 * `ds` and `options` must be live; a non-null `init_beta` must hold
 * `bsccs_dataset_num_drugs(ds)` values; `out` must be writable.
 */
BsccsStatus bsccs_fit(const BsccsDataset *ds,
                      const BsccsFitOptions *options,
                      const double *init_beta,
                      BsccsFit **out);

/**
 * # Safety
 * `fit` must be null or a handle from this library not yet freed.
 */
void bsccs_fit_free(BsccsFit *fit);

/**
 * Copies the coefficients into `out`, which holds `len` values. On
 * `BufferTooSmall` nothing is written; the required length is
 * `bsccs_fit_num_coefficients(fit)`.
 *
 * # Safety
 * `fit` must be live; `out` must hold `len` writable values.
 */
BsccsStatus bsccs_fit_coefficients(const BsccsFit *fit, double *out, size_t len);

/**
 * # Safety
 * `fit` must be null or live.
 */
size_t bsccs_fit_num_coefficients(const BsccsFit *fit);

/**
 * Maximized log posterior; NaN for a null handle.
 *
 * # Safety
 * `fit` must be null or live.
 */
double bsccs_fit_log_posterior(const BsccsFit *fit);

/**
 * # Safety
 * `fit` must be null or live.
 */
size_t bsccs_fit_cycles(const BsccsFit *fit);

/**
 * # Safety
 * `fit` must be null or live.
 */
bool bsccs_fit_converged(const BsccsFit *fit);

/**
 * Selects a prior variance by k-fold cross-validation over `grid` (strictly
 * ascending, `grid_len` values). The prior kind and solver settings come from
 * `options`; its variance is ignored.
 *
 * # Safety
 * `ds` and `options` must be live; `grid` must hold `grid_len` values;
 * `out_variance` must be writable.
 */
BsccsStatus bsccs_cv_select(const BsccsDataset *ds,
                            const BsccsFitOptions *options,
                            size_t k,
                            const double *grid,
                            size_t grid_len,
                            uint64_t seed,
                            double *out_variance);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BSCCS_H */
