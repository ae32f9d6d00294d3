#ifndef COSINET_H
#define COSINET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum CosinetStatus {
  COSINET_STATUS_OK = 0,
  COSINET_STATUS_NULL_POINTER = 1,
  COSINET_STATUS_INVALID_UTF8 = 2,
  COSINET_STATUS_IO = 3,
  COSINET_STATUS_PARSE = 4,
  COSINET_STATUS_MODEL_FILE = 5,
  COSINET_STATUS_CONFIG = 6,
  COSINET_STATUS_INVALID = 7,
  COSINET_STATUS_OUT_OF_RANGE = 8,
  COSINET_STATUS_BUFFER_TOO_SMALL = 9,
  COSINET_STATUS_PANIC = 10,
} CosinetStatus;

typedef enum CosinetBaseline {
  COSINET_BASELINE_WORD_OVERLAP = 0,
  COSINET_BASELINE_RECIPROCAL_RANK = 1,
  COSINET_BASELINE_WORD_OVERLAP_RANK = 2,
} CosinetBaseline;

typedef enum CosinetContext {
  COSINET_CONTEXT_NONE = 0,
  COSINET_CONTEXT_RNN = 1,
  COSINET_CONTEXT_BIRNN = 2,
  COSINET_CONTEXT_LSTM = 3,
  COSINET_CONTEXT_BILSTM = 4,
} CosinetContext;

/**
 * Answered question groups loaded from a WikiQA TSV or JSONL file.
 */
typedef struct CosinetDataset CosinetDataset;

/**
 * A trained model together with its stored word vectors.
 */
typedef struct CosinetModel CosinetModel;

/**
 * Dataset-level metrics in percent.
 */
typedef struct CosinetMetrics {
  double map;
  double mrr;
  double p_at_1;
  size_t n_questions;
  double wall_seconds;
} CosinetMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *cosinet_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cosinet_version(void);

/**
 * Loads a dataset; `.tsv` files are read as WikiQA, anything else as JSONL.
 * Unanswered questions are dropped.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum CosinetStatus cosinet_dataset_load(const char *path, struct CosinetDataset **out_dataset);

/**
 * Releases a dataset. Null is ignored.
 *
 * # Safety
 * `dataset` must come from [`cosinet_dataset_load`] and not be used afterwards.
 */
void cosinet_dataset_free(struct CosinetDataset *dataset);

/**
 * Number of question groups.
 *
 * # Safety
 * `dataset` must be a live handle or null; `out_len` must be writable.
 */
enum CosinetStatus cosinet_dataset_len(const struct CosinetDataset *dataset, size_t *out_len);

/**
 * Number of candidates of group `index`.
 *
 * # Safety
 * `dataset` must be a live handle or null; `out_len` must be writable.
 */
enum CosinetStatus cosinet_dataset_group_len(const struct CosinetDataset *dataset,
                                             size_t index,
                                             size_t *out_len);

/**
 * Scores `dataset` with a lexical baseline.
 *
 * # Safety
 * `dataset` must be a live handle or null; `out_metrics` must be writable.
 */
enum CosinetStatus cosinet_baseline_evaluate(const struct CosinetDataset *dataset,
                                             enum CosinetBaseline method,
                                             struct CosinetMetrics *out_metrics);

/**
 * Trainable parameter count of the paper configuration with `context`.
 *
 * # Safety
 * `out_count` must be writable.
 */
enum CosinetStatus cosinet_param_count(enum CosinetContext context, size_t *out_count);

/**
 * Loads a model file written by `cosinet train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out_model` a writable pointer.
 */
enum CosinetStatus cosinet_model_load(const char *path, struct CosinetModel **out_model);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`cosinet_model_load`] and not be used afterwards.
 */
void cosinet_model_free(struct CosinetModel *model);

/**
 * Trainable parameter count of a loaded model.
 *
 * # Safety
 * `model` must be a live handle or null; `out_count` must be writable.
 */
enum CosinetStatus cosinet_model_param_count(const struct CosinetModel *model, size_t *out_count);

/**
 * Evaluates a model on every group of `dataset`.
 *
 * # Safety
 * Handles must be live or null; `out_metrics` must be writable.
 */
enum CosinetStatus cosinet_model_evaluate(const struct CosinetModel *model,
                                          const struct CosinetDataset *dataset,
                                          struct CosinetMetrics *out_metrics);

/**
 * Writes one score per candidate of group `index`, in candidate order, into
 * `scores[0..capacity]`. `out_written` receives the candidate count; when it
 * exceeds `capacity` the call fails with `BUFFER_TOO_SMALL` and writes no
 * scores, so callers can size the buffer and retry.
 *
 * # Safety
 * Handles must be live or null; `scores` must have room for `capacity`
 * doubles; `out_written` must be writable.
 */
enum CosinetStatus cosinet_model_score_group(const struct CosinetModel *model,
                                             const struct CosinetDataset *dataset,
                                             size_t index,
                                             double *scores,
                                             size_t capacity,
                                             size_t *out_written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COSINET_H */
