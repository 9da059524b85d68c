#ifndef HRF_H
#define HRF_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes returned by every fallible function.
 */
typedef enum HrfStatus {
  HRF_STATUS_OK = 0,
  HRF_STATUS_NULL_POINTER = 1,
  HRF_STATUS_INVALID_ARGUMENT = 2,
  HRF_STATUS_CONFIG = 3,
  HRF_STATUS_NUMERICAL = 4,
  HRF_STATUS_IO = 5,
  HRF_STATUS_CHECKPOINT = 6,
  HRF_STATUS_UNDEFINED_REGION = 7,
  HRF_STATUS_BUFFER_TOO_SMALL = 8,
  HRF_STATUS_PANIC = 9,
} HrfStatus;

/**
 * Opaque handle to a trained model.
 */
typedef struct HrfModel HrfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *hrf_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hrf_version(void);

/**
 * Loads a checkpoint written by `hrf train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum HrfStatus hrf_model_load(const char *path, struct HrfModel **out);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`hrf_model_load`] and not be used afterwards.
 */
void hrf_model_free(struct HrfModel *model);

/**
 * Number of hierarchy levels, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t hrf_model_depth(const struct HrfModel *model);

/**
 * Data dimension, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t hrf_model_dim(const struct HrfModel *model);

/**
 * Draws `n` samples with Euler step counts `steps[0..depth]` into `out`
 * (row-major, `n * dim` values). The same seed reproduces the output.
 *
 * # Safety
 * `steps` must hold `n_levels` values and `out` must hold `out_len` values.
 */
enum HrfStatus hrf_model_sample(const struct HrfModel *model,
                                const size_t *steps,
                                size_t n_levels,
                                size_t n,
                                uint64_t seed,
                                double *out,
                                size_t out_len);

/**
 * Closed-form velocity density at `v` given `(x_t, t)`, for a standard
 * normal source and a 1D Gaussian mixture target with `k` components.
 *
 * # Safety
 * `weights`, `means` and `stds` must hold `k` values; `out` must be writable.
 */
enum HrfStatus hrf_velocity_pdf_1d(const double *weights,
                                   const double *means,
                                   const double *stds,
                                   size_t k,
                                   double v,
                                   double x_t,
                                   double t,
                                   double *out);

/**
 * Exact 1-Wasserstein distance between two 1D samples.
 *
 * # Safety
 * `a` must hold `na` values, `b` must hold `nb`, and `out` must be writable.
 */
enum HrfStatus hrf_wasserstein1(const double *a,
                                size_t na,
                                const double *b,
                                size_t nb,
                                double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* HRF_H */
