#ifndef CETPRED_H
#define CETPRED_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define CET_OK 0

/**
 * Invalid arguments: null pointers, bad UTF-8, out-of-range values.
 */
#define CET_ERR_ARGUMENT 1

/**
 * Configuration or usage error.
 */
#define CET_ERR_USAGE 2

/**
 * Input data or artifact error.
 */
#define CET_ERR_DATA 3

/**
 * Numeric failure.
 */
#define CET_ERR_NUMERIC 4

/**
 * A Rust panic was caught at the boundary.
 */
#define CET_ERR_PANIC 5

#define CET_N_FEATURES 19

#define CET_N_CLASSES 16

#define CET_N_LABELS 4

/**
 * A loaded model artifact.
 */
typedef struct CetModel CetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last error on this thread, or null if none. Valid until
 * the next failing call on the same thread.
 */
const char *cet_last_error_message(void);

/**
 * Category name of the last error on this thread (e.g. `CorruptArtifact`),
 * or null if none.
 */
const char *cet_last_error_category(void);

void cet_clear_error(void);

/**
 * Library version as a static string.
 */
const char *cet_version(void);

/**
 * Name of feature column `index`, or null when out of range.
 */
const char *cet_feature_name(size_t index);

/**
 * Powerset class id of a label combination (each flag 0 or nonzero).
 */
int32_t cet_powerset_encode(uint8_t respiratory,
                            uint8_t hemodynamic,
                            uint8_t renal,
                            uint8_t neurologic);

/**
 * Write the four label flags of class `id` into `out[0..4]`.
 *
 * # Safety
 * `out` must point to 4 writable bytes.
 */
int32_t cet_powerset_decode(uint32_t id, uint8_t *out);

/**
 * Load a model artifact. On success `*out` receives a handle that must be
 * released with [`cet_model_free`].
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
int32_t cet_model_load(const char *path, struct CetModel **out);

/**
 * Release a handle. Null is accepted.
 *
 * # Safety
 * `model` must come from [`cet_model_load`] and not be used afterwards.
 */
void cet_model_free(struct CetModel *model);

/**
 * Family name (`logreg`, `forest`, `gbt`, `mlp`), valid while the handle lives.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
const char *cet_model_family(const struct CetModel *model);

/**
 * Predict `n_rows` raw feature rows (row-major, `CET_N_FEATURES` values
 * each, NaN meaning missing). Missing values are imputed and scaled with
 * the statistics stored in the artifact.
 *
 * Outputs, each optional (null to skip): `proba` receives `n_rows ×
 * CET_N_CLASSES` class probabilities, `marginals` `n_rows × 4` label
 * probabilities, `labels` `n_rows × 4` hard 0/1 labels from the most
 * probable class.
 *
 * # Safety
 * Every non-null pointer must cover the sizes above.
 */
int32_t cet_model_predict(const struct CetModel *model,
                          const double *features,
                          size_t n_rows,
                          double *proba,
                          double *marginals,
                          uint8_t *labels);

/**
 * ROC-AUC of `scores` against 0/1 `truth`, both of length `n`.
 *
 * # Safety
 * `scores` and `truth` must hold `n` elements; `out_auc` must be writable.
 */
int32_t cet_roc_auc(const double *scores, const uint8_t *truth, size_t n, double *out_auc);

/**
 * Write a synthetic cohort (`stays.csv`, `events.csv`, `truth.csv`) into
 * `out_dir` with default prevalences.
 *
 * # Safety
 * `out_dir` must be a nul-terminated string.
 */
int32_t cet_synth_generate(size_t n_stays,
                           uint64_t seed,
                           double signal_strength,
                           const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CETPRED_H */
