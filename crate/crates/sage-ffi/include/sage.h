#ifndef SAGE_H
#define SAGE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum {
  SAGE_STATUS_OK = 0,
  SAGE_STATUS_NULL_ARGUMENT = 1,
  SAGE_STATUS_INVALID_UTF8 = 2,
  SAGE_STATUS_INVALID_CONFIG = 3,
  SAGE_STATUS_RUNTIME_FAILURE = 4,
  SAGE_STATUS_BUFFER_TOO_SMALL = 5,
} SageStatus;

/**
 * Opaque trainer handle: the training state plus the last step's
 * metrics.
 */
typedef struct SageTrainer SageTrainer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sage_version(void);

/**
 * Copy the last error message into `buf` (up to `cap` bytes including
 * the terminator) and return the full length including the terminator.
 * A zero return means no error has been recorded on this thread.
 *
 * # Safety
 * `buf` must point to `cap` writable bytes, or be null (the needed
 * length is still returned).
 */
uintptr_t sage_last_error(char *buf, uintptr_t cap);

/**
 * Build a trainer from a JSON config; a null config uses the defaults.
 * Returns null on failure (see `sage_last_error`).
 *
 * # Safety
 * `config_json` must be null or a NUL-terminated string.
 */
SageTrainer *sage_trainer_new(const char *config_json);

/**
 * Release a trainer handle. Null is a no-op.
 *
 * # Safety
 * `trainer` must be a pointer returned by this library, not yet freed.
 */
void sage_trainer_free(SageTrainer *trainer);

/**
 * Advance the trainer by `steps` optimization steps.
 *
 * # Safety
 * `trainer` must be a live handle from this library.
 */
SageStatus sage_trainer_run(SageTrainer *trainer, uint64_t steps);

/**
 * Current step counter.
 *
 * # Safety
 * `trainer` must be a live handle; `out` must be writable.
 */
SageStatus sage_trainer_step_count(SageTrainer *trainer, uint64_t *out);

/**
 * Serialize the most recent step's metrics as JSON into `buf`.
 * `written` receives the full length including the NUL terminator; when
 * it exceeds `cap` the status is `BufferTooSmall` and the buffer is
 * left untouched.
 *
 * # Safety
 * `trainer` must be a live handle; `buf` must point to `cap` writable
 * bytes; `written` must be writable.
 */
SageStatus sage_trainer_metrics_json(SageTrainer *trainer,
                                     char *buf,
                                     uintptr_t cap,
                                     uintptr_t *written);

/**
 * Estimate the policy's consistency under one operation of the
 * trainer's pool on a fresh probe corpus.
 *
 * # Safety
 * `trainer` must be a live handle; `op_id` a NUL-terminated string;
 * `out` writable.
 */
SageStatus sage_trainer_probe(SageTrainer *trainer,
                              const char *op_id,
                              uintptr_t samples,
                              uint64_t seed,
                              double *out);

/**
 * Write the trainer checkpoint files into a directory.
 *
 * # Safety
 * `trainer` must be a live handle; `dir` a NUL-terminated path.
 */
SageStatus sage_trainer_save(SageTrainer *trainer, const char *dir);

/**
 * Load a trainer from a checkpoint file written by `sage_trainer_save`
 * (the `checkpoint.json` inside the directory). Returns null on
 * failure.
 *
 * # Safety
 * `path` must be a NUL-terminated path string.
 */
SageTrainer *sage_trainer_load(const char *path);

/**
 * Export a (scene, query, answer) corpus as JSONL. A null config uses
 * the default environment.
 *
 * # Safety
 * `config_json` must be null or NUL-terminated; `path` NUL-terminated.
 */
SageStatus sage_corpus_generate(const char *config_json,
                                uint64_t seed,
                                uintptr_t count,
                                const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SAGE_H */
