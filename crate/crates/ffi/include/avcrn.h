#ifndef AVCRN_H
#define AVCRN_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AvcrnStatus {
  AVCRN_STATUS_OK = 0,
  AVCRN_STATUS_NULL_POINTER = 1,
  AVCRN_STATUS_INVALID_ARGUMENT = 2,
  AVCRN_STATUS_FORMAT = 3,
  AVCRN_STATUS_NUMERIC = 4,
  AVCRN_STATUS_IO = 5,
  AVCRN_STATUS_CHECKPOINT = 6,
  AVCRN_STATUS_BUFFER_TOO_SMALL = 7,
  AVCRN_STATUS_PANIC = 8,
} AvcrnStatus;

/**
 * Opaque model handle.
 */
typedef struct AvcrnModel AvcrnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *avcrn_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *avcrn_version(void);

/**
 * Builds a freshly initialized model from a JSON model config.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` a writable pointer.
 */
enum AvcrnStatus avcrn_model_new(const char *config_json, uint64_t seed, struct AvcrnModel **out);

/**
 * Loads the model stored in a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum AvcrnStatus avcrn_model_load(const char *path, struct AvcrnModel **out);

/**
 * Writes the model as a checkpoint without optimizer state.
 *
 * # Safety
 * `model` must come from this library and `path` be a NUL-terminated string.
 */
enum AvcrnStatus avcrn_model_save(const struct AvcrnModel *model, const char *path);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void avcrn_model_free(struct AvcrnModel *model);

/**
 * Number of learnable scalars.
 *
 * # Safety
 * `model` must come from this library and `out` be writable.
 */
enum AvcrnStatus avcrn_model_num_params(const struct AvcrnModel *model, size_t *out);

/**
 * Whether the model reads video (1) or ignores it (0).
 *
 * # Safety
 * `model` must come from this library and `out` be writable.
 */
enum AvcrnStatus avcrn_model_uses_video(const struct AvcrnModel *model, int32_t *out);

/**
 * Enhances `len` samples at 16 kHz into `out`, which must hold `len` values.
 * `video` holds `video_len` pixels in [0, 1], 5 x 80 x 80 per 200 ms
 * segment, or is null to feed black frames.
 *
 * # Safety
 * Buffers must be valid for the given lengths.
 */
enum AvcrnStatus avcrn_enhance(const struct AvcrnModel *model,
                               const double *samples,
                               size_t len,
                               const double *video,
                               size_t video_len,
                               double *out,
                               size_t out_len);

/**
 * Log-mel matrix of `len` samples, 80 rows of `frames` values, row-major.
 * With `out` null only `frames` is written, so callers can size the buffer.
 *
 * # Safety
 * Buffers must be valid for the given lengths and `frames` writable.
 */
enum AvcrnStatus avcrn_log_mel(const double *samples,
                               size_t len,
                               double *out,
                               size_t out_len,
                               size_t *frames);

/**
 * Intelligibility score in [0, 1] of two equal-length 16 kHz signals.
 *
 * # Safety
 * Both buffers must hold `len` values and `out` be writable.
 */
enum AvcrnStatus avcrn_stoi(const double *clean, const double *processed, size_t len, double *out);

/**
 * Scale-invariant SDR in dB, clamped to ±100.
 *
 * # Safety
 * Both buffers must hold `len` values and `out` be writable.
 */
enum AvcrnStatus avcrn_si_sdr(const double *reference,
                              const double *estimate,
                              size_t len,
                              double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AVCRN_H */
