#ifndef TITANT_H
#define TITANT_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TitantStatus {
  TITANT_STATUS_OK = 0,
  TITANT_STATUS_NULL_POINTER = 1,
  TITANT_STATUS_INVALID_UTF8 = 2,
  TITANT_STATUS_IO = 3,
  TITANT_STATUS_PARSE = 4,
  TITANT_STATUS_ARITY = 5,
  TITANT_STATUS_NOT_FOUND = 6,
  TITANT_STATUS_NO_VERSIONS = 7,
  TITANT_STATUS_NO_MODEL = 8,
  TITANT_STATUS_CONFIG = 9,
  TITANT_STATUS_BUFFER_TOO_SMALL = 10,
  TITANT_STATUS_CORRUPT = 11,
  TITANT_STATUS_INTERNAL = 99,
} TitantStatus;

/**
 * Loaded model handle.
 */
typedef struct TitantModel TitantModel;

/**
 * Scorer handle bound to one store.
 */
typedef struct TitantScorer TitantScorer;

/**
 * Feature store handle.
 */
typedef struct TitantStore TitantStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *titant_version(void);

/**
 * Width of the basic feature family.
 */
size_t titant_basic_features(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *titant_last_error(void);

/**
 * Opens (creating if needed) the store directory at `path`.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a writable pointer.
 */
enum TitantStatus titant_store_open(const char *path, struct TitantStore **out);

/**
 * # Safety
 * `store` must come from [`titant_store_open`] and not be used afterwards.
 */
void titant_store_free(struct TitantStore *store);

/**
 * Writes the latest version date (`YYYY-MM-DD`) into `buf`.
 *
 * # Safety
 * `store` must be a live handle; `buf` must hold `cap` bytes.
 */
enum TitantStatus titant_store_latest_date(const struct TitantStore *store,
                                           char *buf,
                                           size_t cap,
                                           size_t *needed);

/**
 * Reads `user`'s row from the latest version. `basic` must hold 52 values
 * and `embedding` `emb_cap`; `emb_len` receives the embedding width and
 * `found` 0 or 1. Buffers are untouched when the user is absent.
 *
 * # Safety
 * All pointers must be valid for the stated sizes.
 */
enum TitantStatus titant_store_get_latest(const struct TitantStore *store,
                                          const char *user,
                                          double *basic,
                                          double *embedding,
                                          size_t emb_cap,
                                          size_t *emb_len,
                                          int32_t *found);

/**
 * Loads a model file.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a writable pointer.
 */
enum TitantStatus titant_model_load(const char *path, struct TitantModel **out);

/**
 * # Safety
 * `model` must come from [`titant_model_load`] and not be used afterwards.
 */
void titant_model_free(struct TitantModel *model);

/**
 * Number of raw features the model expects, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t titant_model_arity(const struct TitantModel *model);

/**
 * Scores one raw feature vector of length `n`.
 *
 * # Safety
 * `x` must hold `n` values and `out` be writable.
 */
enum TitantStatus titant_model_predict(const struct TitantModel *model,
                                       const double *x,
                                       size_t n,
                                       double *out);

/**
 * Creates a scorer reading from `store`. The store handle may be freed
 * afterwards; the scorer keeps its own reference.
 *
 * # Safety
 * `store` must be a live handle and `out` writable.
 */
enum TitantStatus titant_scorer_new(const struct TitantStore *store, struct TitantScorer **out);

/**
 * # Safety
 * `scorer` must come from [`titant_scorer_new`] and not be used afterwards.
 */
void titant_scorer_free(struct TitantScorer *scorer);

/**
 * Atomically replaces the scorer's model. On failure the previous model
 * stays active.
 *
 * # Safety
 * `scorer` must be a live handle and `path` a nul-terminated string.
 */
enum TitantStatus titant_scorer_load_model(const struct TitantScorer *scorer,
                                           const char *path,
                                           double threshold);

/**
 * Scores one JSON request and writes the JSON response into `buf`.
 * Scoring failures are reported inside the response, not as a status.
 *
 * # Safety
 * `scorer` must be a live handle, `request` nul-terminated and `buf`
 * valid for `cap` bytes.
 */
enum TitantStatus titant_scorer_score_json(const struct TitantScorer *scorer,
                                           const char *request,
                                           char *buf,
                                           size_t cap,
                                           size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TITANT_H */
