#ifndef PROBEKIT_H
#define PROBEKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PkStatus {
  PK_STATUS_OK = 0,
  PK_STATUS_NULL_POINTER = 1,
  PK_STATUS_INVALID_ARGUMENT = 2,
  PK_STATUS_IO = 3,
  PK_STATUS_CORRUPT = 4,
  PK_STATUS_OUT_OF_RANGE = 5,
  PK_STATUS_BUFFER_TOO_SMALL = 6,
  PK_STATUS_NUMERIC = 7,
  PK_STATUS_PANIC = 8,
} PkStatus;

/**
 * Opaque handle to an opened `.mps` store.
 */
typedef struct PkStore PkStore;

typedef struct PkTTest {
  double t_statistic;
  double degrees_of_freedom;
  double p_one_sided;
  double p_two_sided;
  double mean_a;
  double mean_b;
} PkTTest;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty if none. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *pk_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pk_version(void);

/**
 * Open and verify a store. On success `*out` owns a handle that must be
 * released with [`pk_store_free`].
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum PkStatus pk_store_open(const char *path, struct PkStore **out);

/**
 * Release a handle. Null is ignored.
 *
 * # Safety
 * `store` must come from [`pk_store_open`] and not be used afterwards.
 */
void pk_store_free(struct PkStore *store);

/**
 * Writes the layer count, hidden size and sentence count; any out pointer
 * may be null.
 *
 * # Safety
 * `store` must be a live handle; non-null out pointers must be valid.
 */
enum PkStatus pk_store_shape(const struct PkStore *store,
                             size_t *n_layers,
                             size_t *hidden_dim,
                             size_t *n_sentences);

/**
 * Copy one layer (`n_sentences * hidden_dim` floats, row-major, rows in
 * header order) into `buf`, which holds `len` floats.
 *
 * # Safety
 * `store` must be a live handle and `buf` valid for `len` writes.
 */
enum PkStatus pk_store_read_layer(const struct PkStore *store,
                                  size_t layer,
                                  float *buf,
                                  size_t len);

/**
 * `(raw - baseline) / (1 - baseline)`; `*degenerate` is set and the value
 * is 0 when the baseline is within 1e-9 of 1.
 *
 * # Safety
 * Out pointers must be valid.
 */
enum PkStatus pk_normalized_perf(double raw, double baseline, double *value, bool *degenerate);

/**
 * First layer reaching `ratio * peak` and the earliest argmax. A curve with
 * a non-positive peak reports `*saturation = -1`.
 *
 * # Safety
 * `values` must be valid for `n` reads; out pointers must be valid.
 */
enum PkStatus pk_saturation_layer(const double *values,
                                  size_t n,
                                  double ratio,
                                  int64_t *saturation,
                                  size_t *maximum);

/**
 * Welch's t-test of `a` against `b`.
 *
 * # Safety
 * `a`/`b` must be valid for `na`/`nb` reads and `out` valid.
 */
enum PkStatus pk_welch_t_test(const double *a,
                              size_t na,
                              const double *b,
                              size_t nb,
                              struct PkTTest *out);

/**
 * Stouffer combination of one-sided p-values.
 *
 * # Safety
 * `p` must be valid for `n` reads; out pointers must be valid.
 */
enum PkStatus pk_stouffer_combine(const double *p, size_t n, double *z, double *combined_p);

/**
 * Inverse standard normal CDF for `p` in (0, 1).
 *
 * # Safety
 * `out` must be valid.
 */
enum PkStatus pk_normal_cdf_inverse(double p, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROBEKIT_H */
