/* C interface to the epicast forecasting library. */

#ifndef EPICAST_H
#define EPICAST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code returned by every fallible function in this interface.
 */
typedef enum EpicastStatus {
  /**
   * The call succeeded.
   */
  EPICAST_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  EPICAST_STATUS_NULL_POINTER = 1,
  /**
   * An argument failed validation (bad encoding, unknown name, bad value).
   */
  EPICAST_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Reading the input file failed.
   */
  EPICAST_STATUS_IO_ERROR = 3,
  /**
   * Model fitting or forecasting failed.
   */
  EPICAST_STATUS_RUN_FAILED = 4,
  /**
   * The caller-provided buffer is too small; the required size has been
   * written to the length argument.
   */
  EPICAST_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * The library panicked internally. This is a bug; the message from
   * `epicast_last_error` should be reported.
   */
  EPICAST_STATUS_INTERNAL_PANIC = 6,
} EpicastStatus;

/**
 * Daily case series for one or more regions, keyed by region id.
 */
typedef struct EpicastCorpus EpicastCorpus;

/**
 * A sample forecast: `draws x horizon` whole case counts.
 */
typedef struct EpicastForecast EpicastForecast;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns the library version as a static NUL-terminated string.
 */
const char *epicast_version(void);

/**
 * Returns the message from the most recent failing call on this thread, or
 * an empty string if none has failed yet. The pointer stays valid until the
 * next failing call on the same thread.
 */
const char *epicast_last_error(void);

/**
 * Loads a cases file (CSV with columns date, region, cases, population) and
 * returns a corpus handle in `out`. Negative counts are zeroed the same way
 * the backtest runner does it. Free with `epicast_corpus_free`.
 */
enum EpicastStatus epicast_corpus_load(const char *path, struct EpicastCorpus **out);

/**
 * Releases a corpus handle. A null handle is a no-op.
 */
void epicast_corpus_free(struct EpicastCorpus *corpus);

/**
 * Returns the number of regions in the corpus, or 0 for a null handle.
 */
uintptr_t epicast_corpus_region_count(const struct EpicastCorpus *corpus);

/**
 * Copies the id of the region at `index` (regions are sorted by id) into
 * `buf` as a NUL-terminated string. `len` carries the buffer capacity in and
 * the required size (including the NUL) out. Call with a null `buf` to query
 * the size alone.
 */
enum EpicastStatus epicast_corpus_region_id(const struct EpicastCorpus *corpus,
                                            uintptr_t index,
                                            char *buf,
                                            uintptr_t *len);

/**
 * Writes the first and last day of `region`'s series to `start` and `end`
 * as days since 1970-01-01.
 */
enum EpicastStatus epicast_corpus_region_range(const struct EpicastCorpus *corpus,
                                               const char *region,
                                               int64_t *start,
                                               int64_t *end);

/**
 * Fits one model and samples a 14-day forecast.
 *
 * `origin` is an ISO-8601 date with at least 56 days of history in the
 * series; `family` is one of cori, renewal-rw, sarima, trend, gp (each run
 * with its default settings); `draws` of 0 selects the default of 2000.
 * The result must be freed with `epicast_forecast_free`.
 */
enum EpicastStatus epicast_forecast_run(const struct EpicastCorpus *corpus,
                                        const char *region,
                                        const char *origin,
                                        const char *family,
                                        uintptr_t draws,
                                        uint64_t seed,
                                        struct EpicastForecast **out);

/**
 * Releases a forecast handle. A null handle is a no-op.
 */
void epicast_forecast_free(struct EpicastForecast *forecast);

/**
 * Writes the number of draws and the horizon (days) of a forecast. Either
 * output pointer may be null to skip it.
 */
enum EpicastStatus epicast_forecast_shape(const struct EpicastForecast *forecast,
                                          uintptr_t *n_draws,
                                          uintptr_t *horizon);

/**
 * Copies the forecast counts into `buf` in row-major order (draw by draw,
 * `n_draws * horizon` values). `len` carries the buffer capacity in elements
 * in and the required element count out. Call with a null `buf` to query the
 * size alone.
 */
enum EpicastStatus epicast_forecast_counts(const struct EpicastForecast *forecast,
                                           double *buf,
                                           uintptr_t *len);

/**
 * Scores one forecast week against an observed weekly count with the sample
 * CRPS on the log incidence scale. `draws` holds `n` weekly counts (one per
 * posterior sample), `observed` the observed weekly count, `population` the
 * region population, and `log_offset` the transform offset (pass 0 for the
 * default of 0.01 per 100k).
 */
enum EpicastStatus epicast_crps_log(const double *draws,
                                    uintptr_t n,
                                    double observed,
                                    uint64_t population,
                                    double log_offset,
                                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EPICAST_H */
