#ifndef NNOSE_H
#define NNOSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every fallible call.
 */
typedef enum {
  NNOSE_STATUS_OK = 0,
  NNOSE_STATUS_NULL_POINTER = 1,
  NNOSE_STATUS_INVALID_ARGUMENT = 2,
  NNOSE_STATUS_IO = 3,
  NNOSE_STATUS_FORMAT = 4,
  NNOSE_STATUS_DIMENSION_MISMATCH = 5,
  NNOSE_STATUS_NO_INDEX = 6,
  NNOSE_STATUS_PANIC = 7,
} NnoseStatus;

/**
 * Label ordinals as stored on disk.
 */
typedef enum {
  NNOSE_LABEL_O = 0,
  NNOSE_LABEL_B = 1,
  NNOSE_LABEL_I = 2,
} NnoseLabel;

typedef enum {
  NNOSE_SEARCH_MODE_EXACT = 0,
  NNOSE_SEARCH_MODE_CLUSTERED = 1,
} NnoseSearchMode;

/**
 * Opaque datastore handle.
 */
typedef struct NnoseStore NnoseStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads an NDS1 file. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
NnoseStatus nnose_store_load(const char *path, NnoseStore **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `store` must come from [`nnose_store_load`] and not be used afterwards.
 */
void nnose_store_free(NnoseStore *store);

/**
 * Key dimension, or 0 for a null handle.
 *
 * # Safety
 * `store` must be null or a live handle.
 */
size_t nnose_store_dim(const NnoseStore *store);

/**
 * Entry count, or 0 for a null handle.
 *
 * # Safety
 * `store` must be null or a live handle.
 */
size_t nnose_store_len(const NnoseStore *store);

/**
 * Writes up to `k` neighbors of a raw query, nearest first. `mode` is an
 * `NnoseSearchMode` value. Each output array must hold `k` elements;
 * `*out_count` receives the number written.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `query` holds `dim` values.
 */
NnoseStatus nnose_store_search(const NnoseStore *store,
                               const double *query,
                               size_t dim,
                               size_t k,
                               uint32_t mode,
                               size_t *out_indices,
                               double *out_distances,
                               NnoseLabel *out_labels,
                               size_t *out_count);

/**
 * Fused distribution for one token: retrieval from `store`, then
 * interpolation with the base distribution `base` (O, B, I order). `mode`
 * is an `NnoseSearchMode` value.
 *
 * # Safety
 * `query` holds `dim` values, `base` and `out` hold 3; `out_label` is valid.
 */
NnoseStatus nnose_infer_token(const NnoseStore *store,
                              const double *query,
                              size_t dim,
                              const double *base,
                              size_t k,
                              double lambda,
                              double temperature,
                              uint32_t mode,
                              double *out,
                              NnoseLabel *out_label);

/**
 * Temperature-scaled kNN label distribution over `n` neighbors; labels
 * are `NnoseLabel` values.
 *
 * # Safety
 * `labels` and `distances` hold `n` values; `out` holds 3.
 */
NnoseStatus nnose_knn_distribution(const uint32_t *labels,
                                   const double *distances,
                                   size_t n,
                                   double temperature,
                                   double *out);

/**
 * `lambda * p_knn + (1 - lambda) * p_se`, all in O, B, I order.
 *
 * # Safety
 * Each pointer addresses 3 values.
 */
NnoseStatus nnose_interpolate(const double *p_knn, const double *p_se, double lambda, double *out);

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to fit) and returns the full message length
 * excluding the terminator. Pass a null `buf` to query the length.
 *
 * # Safety
 * `buf` must be null or writable for `len` bytes.
 */
size_t nnose_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *nnose_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NNOSE_H */
