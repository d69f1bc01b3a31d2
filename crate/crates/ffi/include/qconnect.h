#ifndef QCONNECT_H
#define QCONNECT_H

#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible function.
 */
typedef enum QcStatus {
  QC_STATUS_OK = 0,
  QC_STATUS_NULL_POINTER = 1,
  QC_STATUS_INVALID_UTF8 = 2,
  QC_STATUS_INVALID_ARGUMENT = 3,
  QC_STATUS_IO = 4,
  QC_STATUS_PARSE = 5,
  QC_STATUS_INSUFFICIENT_DATA = 6,
  QC_STATUS_NUMERICAL = 7,
  QC_STATUS_NOT_CONVERGED = 8,
  QC_STATUS_OUT_OF_RANGE = 9,
  QC_STATUS_INTERNAL = 10,
} QcStatus;

/**
 * Log returns loaded from a price file or supplied directly.
 */
typedef struct QcPanel QcPanel;

/**
 * Connectedness tables for one fitted quantile: index 0 is the time-domain
 * table, followed by the short, medium and long frequency bands.
 */
typedef struct QcResult QcResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *qc_last_error(void);

/**
 * Loads a price CSV, drops incomplete rows and converts to log returns.
 * `date_column` may be null, in which case `"date"` is used.
 *
 * # Safety
 * `path` and a non-null `date_column` must be NUL-terminated strings;
 * `out` must be a valid pointer to write the handle into.
 */
enum QcStatus qc_panel_load_prices(const char *path, const char *date_column, struct QcPanel **out);

/**
 * Builds a panel from a row-major `n_obs x n_series` block of returns.
 * Series are labelled `S1..Sn`.
 *
 * # Safety
 * `data` must point to `n_obs * n_series` readable doubles; `out` must be
 * a valid pointer to write the handle into.
 */
enum QcStatus qc_panel_from_returns(const double *data,
                                    uintptr_t n_obs,
                                    uintptr_t n_series,
                                    struct QcPanel **out);

/**
 * Number of return observations, or 0 for a null handle.
 *
 * # Safety
 * `panel` must be null or a handle from this library.
 */
uintptr_t qc_panel_n_obs(const struct QcPanel *panel);

/**
 * Number of series, or 0 for a null handle.
 *
 * # Safety
 * `panel` must be null or a handle from this library.
 */
uintptr_t qc_panel_n_series(const struct QcPanel *panel);

/**
 * # Safety
 * `panel` must be null or a handle from this library not yet freed.
 */
void qc_panel_free(struct QcPanel *panel);

/**
 * Fits a quantile VAR with `lag` lags at quantile `tau` and computes the
 * time-domain table plus the default short, medium and long bands.
 *
 * # Safety
 * `panel` must be a handle from this library; `out` must be a valid
 * pointer to write the result handle into.
 */
enum QcStatus qc_connectedness(const struct QcPanel *panel,
                               uintptr_t lag,
                               double tau,
                               uintptr_t horizon,
                               struct QcResult **out);

/**
 * Number of tables in a result (time domain plus bands), or 0 for null.
 *
 * # Safety
 * `result` must be null or a handle from this library.
 */
uintptr_t qc_result_band_count(const struct QcResult *result);

/**
 * Label of table `band`, or null when out of range. Owned by the result.
 *
 * # Safety
 * `result` must be null or a handle from this library.
 */
const char *qc_result_band_label(const struct QcResult *result, uintptr_t band);

/**
 * Label of series `index`, or null when out of range. Owned by the result.
 *
 * # Safety
 * `result` must be null or a handle from this library.
 */
const char *qc_result_series_label(const struct QcResult *result, uintptr_t index);

/**
 * Total connectedness index (percent) of table `band`.
 *
 * # Safety
 * `result` must be a handle from this library; `tci` must be writable.
 */
enum QcStatus qc_result_tci(const struct QcResult *result, uintptr_t band, double *tci);

/**
 * Copies TO, FROM and NET (percent) of table `band` into three buffers of
 * at least `len` doubles each; `len` must cover the number of series.
 *
 * # Safety
 * Each buffer must hold `len` writable doubles.
 */
enum QcStatus qc_result_measures(const struct QcResult *result,
                                 uintptr_t band,
                                 double *to,
                                 double *from,
                                 double *net,
                                 uintptr_t len);

/**
 * Copies the normalized share matrix of table `band` in row-major order
 * into a buffer of at least `n * n` doubles.
 *
 * # Safety
 * `theta` must hold `len` writable doubles.
 */
enum QcStatus qc_result_theta(const struct QcResult *result,
                              uintptr_t band,
                              double *theta,
                              uintptr_t len);

/**
 * # Safety
 * `result` must be null or a handle from this library not yet freed.
 */
void qc_result_free(struct QcResult *result);

/**
 * Long-only, fully invested weights minimizing `w' M w` for a symmetric
 * row-major `n x n` matrix (a covariance, correlation or pairwise
 * connectedness matrix).
 *
 * # Safety
 * `matrix` must hold `n * n` readable doubles and `weights` `n` writable
 * doubles.
 */
enum QcStatus qc_min_weights(const double *matrix, uintptr_t n, double *weights);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QCONNECT_H */
