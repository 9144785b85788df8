#ifndef DIMASR_H
#define DIMASR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Bumped whenever a signature or struct layout changes.
 */
#define DIMASR_ABI_VERSION 1

typedef enum DimasrStatus {
  DIMASR_STATUS_OK = 0,
  DIMASR_STATUS_NULL_POINTER = 1,
  DIMASR_STATUS_INVALID_UTF8 = 2,
  DIMASR_STATUS_INVALID_ARGUMENT = 3,
  DIMASR_STATUS_PARSE_ERROR = 4,
  DIMASR_STATUS_DATA_ERROR = 5,
  DIMASR_STATUS_IO_ERROR = 6,
  DIMASR_STATUS_MODEL_ERROR = 7,
  DIMASR_STATUS_BUFFER_TOO_SMALL = 8,
  DIMASR_STATUS_PANIC = 9,
} DimasrStatus;

/**
 * Opaque handle to a loaded checkpoint.
 */
typedef struct DimasrModel DimasrModel;

typedef struct DimasrVaPair {
  double valence;
  double arousal;
} DimasrVaPair;

typedef struct DimasrReport {
  double rmse_va;
  double rmse_v;
  double rmse_a;
  size_t n;
  double error_median;
  double frac_below_1;
  double frac_above_2;
} DimasrReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

uint32_t dimasr_abi_version(void);

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *dimasr_last_error_message(void);

/**
 * Parses a gold-style `"V#A"` string. Out-of-range values are an error.
 *
 * # Safety
 * `text` must be a valid NUL-terminated string and `out` writable.
 */
enum DimasrStatus dimasr_va_parse(const char *text, struct DimasrVaPair *out);

/**
 * Writes `"V.VV#A.AA"` plus a NUL into `buf`. Needs at least 10 bytes.
 *
 * # Safety
 * `buf` must point to `len` writable bytes.
 */
enum DimasrStatus dimasr_va_format(struct DimasrVaPair pair, char *buf, size_t len);

/**
 * Maps an unbounded score into the open interval (1, 9).
 */
double dimasr_scale_to_va(double raw);

/**
 * Extracts and clips the first `number#number` in a free-form reply.
 *
 * # Safety
 * `text` must be a valid NUL-terminated string and `out` writable.
 */
enum DimasrStatus dimasr_parse_llm_output(const char *text, struct DimasrVaPair *out);

/**
 * # Safety
 * `preds` and `golds` must each point to `n` pairs; `out` must be writable.
 */
enum DimasrStatus dimasr_rmse_va(const struct DimasrVaPair *preds,
                                 const struct DimasrVaPair *golds,
                                 size_t n,
                                 double *out);

/**
 * # Safety
 * `preds` and `golds` must each point to `n` pairs; both outputs writable.
 */
enum DimasrStatus dimasr_rmse_per_dimension(const struct DimasrVaPair *preds,
                                            const struct DimasrVaPair *golds,
                                            size_t n,
                                            double *out_v,
                                            double *out_a);

/**
 * Scores a prediction file against a gold instance file.
 *
 * # Safety
 * Paths must be valid NUL-terminated strings and `out` writable.
 */
enum DimasrStatus dimasr_score_files(const char *gold_path,
                                     const char *pred_path,
                                     struct DimasrReport *out);

/**
 * Loads a checkpoint directory. Release the handle with
 * [`dimasr_model_free`].
 *
 * # Safety
 * `dir` must be a valid NUL-terminated string and `out` writable.
 */
enum DimasrStatus dimasr_model_load(const char *dir, struct DimasrModel **out);

/**
 * # Safety
 * `model` must come from [`dimasr_model_load`]; `out` must be writable.
 */
enum DimasrStatus dimasr_model_hidden_dim(const struct DimasrModel *model, size_t *out);

/**
 * Predicts one (text, aspect) instance in evaluation mode.
 *
 * # Safety
 * `model` must come from [`dimasr_model_load`]; strings must be valid and
 * NUL-terminated; `out` must be writable.
 */
enum DimasrStatus dimasr_model_predict(const struct DimasrModel *model,
                                       const char *text,
                                       const char *aspect,
                                       struct DimasrVaPair *out);

/**
 * Releases a model handle. NULL is ignored.
 *
 * # Safety
 * `model` must come from [`dimasr_model_load`] and not be used afterwards.
 */
void dimasr_model_free(struct DimasrModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIMASR_H */
