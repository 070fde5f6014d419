#ifndef AURICLE_H
#define AURICLE_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Call outcome. Anything except `Ok` leaves a message readable via
// `auricle_last_error`.
typedef enum AuricleStatus {
  AURICLE_STATUS_OK = 0,
  AURICLE_STATUS_INVALID_ARGUMENT = 1,
  AURICLE_STATUS_IO = 2,
  AURICLE_STATUS_PARSE = 3,
  AURICLE_STATUS_VALIDATION = 4,
  AURICLE_STATUS_DOMAIN = 5,
  AURICLE_STATUS_CONFIG = 6,
  AURICLE_STATUS_DEPENDENCY = 7,
  AURICLE_STATUS_RUNTIME = 8,
} AuricleStatus;

// Opaque benchmark dataset handle.
typedef struct AuricleDataset AuricleDataset;

// Opaque decoding engine: model, tokenizer, projector and encoder.
typedef struct AuricleEngine AuricleEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string; do not free.
const char *auricle_version(void);

// Returns the last error message for this thread as a newly allocated
// string (free with `auricle_string_free`), or NULL when no error is set.
char *auricle_last_error(void);

// Frees a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must have been returned by an auricle function documented to require
// `auricle_string_free`, and must not have been freed already.
void auricle_string_free(char *s);

// Peak level in dBFS of `len` samples in [-1, 1].
//
// # Safety
// `samples` must point to `len` readable doubles; `out` must be writable.
enum AuricleStatus auricle_peak_dbfs(const double *samples, size_t len, double *out);

// IQR outlier filter. Survivors are written to `out` (capacity at least
// `len`) in input order; the survivor count goes to `out_len`.
//
// # Safety
// `values` must point to `len` readable doubles; `out` must have room for
// `len` doubles; `out_len` must be writable.
enum AuricleStatus auricle_iqr_filter(const double *values,
                                      size_t len,
                                      double *out,
                                      size_t *out_len);

// Two-sided Welch t-test p-value from per-class summaries (count, mean,
// unbiased variance).
//
// # Safety
// `out` must be writable.
enum AuricleStatus auricle_welch_p_value(size_t n1,
                                         double mean1,
                                         double var1,
                                         size_t n2,
                                         double mean2,
                                         double var2,
                                         double *out);

// Opens a JSONL dataset file and validates it.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable. The handle
// must be released with `auricle_dataset_free`.
enum AuricleStatus auricle_dataset_open(const char *path, struct AuricleDataset **out);

// Number of items in the dataset.
//
// # Safety
// `dataset` must be a live handle from `auricle_dataset_open`.
size_t auricle_dataset_len(const struct AuricleDataset *dataset);

// Task name of the dataset (static string; do not free).
//
// # Safety
// `dataset` must be a live handle from `auricle_dataset_open`.
const char *auricle_dataset_task(const struct AuricleDataset *dataset);

// Majority-class accuracy of the dataset's gold answers.
//
// # Safety
// `dataset` must be a live handle; `out` must be writable.
enum AuricleStatus auricle_dataset_majority_accuracy(const struct AuricleDataset *dataset,
                                                     double *out);

// Releases a dataset handle. NULL is ignored.
//
// # Safety
// `dataset` must be NULL or a live handle; it must not be used afterwards.
void auricle_dataset_free(struct AuricleDataset *dataset);

// Opens an engine from a model checkpoint, an optional projector checkpoint
// (NULL gives a fresh seeded projector) and an optional encoder spec
// (`"ngram:<dim>"` or `"pitch-world:<path>[:<dim>]"`, NULL means `ngram:16`).
//
// # Safety
// String arguments must be NUL-terminated or NULL where documented; `out`
// must be writable. The handle must be released with `auricle_engine_free`.
enum AuricleStatus auricle_engine_open(const char *model_checkpoint,
                                       const char *projector_checkpoint,
                                       const char *encoder_spec,
                                       struct AuricleEngine **out);

// Runs imagination decoding on a prompt and returns the full trace as a JSON
// string (free with `auricle_string_free`).
//
// # Safety
// `engine` must be a live handle; `prompt` must be NUL-terminated;
// `out_trace_json` must be writable.
enum AuricleStatus auricle_engine_generate(const struct AuricleEngine *engine,
                                           const char *prompt,
                                           size_t max_new_tokens,
                                           size_t max_imagination_events,
                                           char **out_trace_json);

// Releases an engine handle. NULL is ignored.
//
// # Safety
// `engine` must be NULL or a live handle; it must not be used afterwards.
void auricle_engine_free(struct AuricleEngine *engine);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AURICLE_H */
