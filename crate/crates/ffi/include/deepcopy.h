/* C interface for the deepcopy dialogue generator. */

#ifndef DEEPCOPY_FFI_H
#define DEEPCOPY_FFI_H

/* This file is generated by cbindgen from the deepcopy-ffi crate; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible call.
 */
typedef enum DcStatus {
  /**
   * Success.
   */
  DC_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  DC_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  DC_STATUS_INVALID_UTF8 = 2,
  /**
   * A file could not be read.
   */
  DC_STATUS_IO = 3,
  /**
   * The checkpoint failed validation.
   */
  DC_STATUS_CORRUPT_CHECKPOINT = 4,
  /**
   * The checkpoint holds a variant this interface refuses to serve.
   */
  DC_STATUS_UNSUPPORTED_VARIANT = 5,
  /**
   * An argument was structurally invalid (empty facts, zero width, a
   * vocabulary that does not match the checkpoint, ...).
   */
  DC_STATUS_INVALID_ARGUMENT = 6,
  /**
   * Decoding failed.
   */
  DC_STATUS_GENERATION_FAILED = 7,
  /**
   * A panic was caught at the boundary.
   */
  DC_STATUS_PANIC = 8,
} DcStatus;

/**
 * A loaded model plus the vocabulary it was trained with. Opaque.
 */
typedef struct DcModel DcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Load a checkpoint file and its vocabulary file into an opaque handle.
 *
 * On `DC_STATUS_OK`, `*out_model` owns the handle; release it with
 * [`dc_model_free`].
 *
 * # Safety
 * `checkpoint_path` and `vocab_path` must be NUL-terminated strings;
 * `out_model` must point to writable storage for one pointer.
 */
enum DcStatus dc_model_load(const char *checkpoint_path,
                            const char *vocab_path,
                            struct DcModel **out_model);

/**
 * Release a handle returned by [`dc_model_load`]. NULL is a no-op.
 *
 * # Safety
 * `model` must be NULL or a pointer obtained from [`dc_model_load`] that
 * has not been freed already.
 */
void dc_model_free(struct DcModel *model);

/**
 * Write the model's variant label (for example `DeepCopy` or `S2SC-1`) to
 * `*out_label` as a caller-owned string.
 *
 * # Safety
 * `model` must be a live handle; `out_label` must point to writable storage
 * for one pointer.
 */
enum DcStatus dc_model_variant(const struct DcModel *model, char **out_label);

/**
 * Generate a response for a context utterance grounded in `n_facts` persona
 * facts, using beam search of the given width and length limit. The
 * tokenized response (tokens joined by single spaces, out-of-vocabulary
 * copies surfaced as their source strings) is written to `*out_response` as
 * a caller-owned string.
 *
 * # Safety
 * `model` must be a live handle; `context` and every entry of
 * `facts[0..n_facts]` must be NUL-terminated strings; `out_response` must
 * point to writable storage for one pointer.
 */
enum DcStatus dc_generate(const struct DcModel *model,
                          const char *context,
                          const char *const *facts,
                          size_t n_facts,
                          size_t beam_width,
                          size_t max_len,
                          char **out_response);

/**
 * Release a string returned by this interface. NULL is a no-op.
 *
 * # Safety
 * `s` must be NULL or a string obtained from this interface that has not
 * been freed already.
 */
void dc_string_free(char *s);

/**
 * Return the calling thread's most recent error message as a caller-owned
 * string, or NULL if no error has occurred on this thread.
 */
char *dc_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEEPCOPY_FFI_H */
