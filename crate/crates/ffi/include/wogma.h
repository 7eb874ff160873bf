#ifndef WOGMA_H
#define WOGMA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum WogmaStatus {
  WOGMA_STATUS_OK = 0,
  WOGMA_STATUS_NULL_ARGUMENT = 1,
  WOGMA_STATUS_INVALID_ARGUMENT = 2,
  WOGMA_STATUS_IO = 3,
  WOGMA_STATUS_FORMAT = 4,
  WOGMA_STATUS_NUMERIC = 5,
  WOGMA_STATUS_PANIC = 6,
} WogmaStatus;

/**
 * Loaded detector.
 */
typedef struct WogmaModel WogmaModel;

/**
 * Recurrent state of one video being scored clip by clip.
 */
typedef struct WogmaStream WogmaStream;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a checkpoint from a NUL-terminated UTF-8 path.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer. On success
 * `*out` owns a model that must be released with [`wogma_model_free`].
 */
enum WogmaStatus wogma_model_load(const char *path, struct WogmaModel **out);

/**
 * # Safety
 * `model` must come from [`wogma_model_load`] and not be freed twice.
 * Null is ignored.
 */
void wogma_model_free(struct WogmaModel *model);

/**
 * Number of `f64` values in one clip (`frames × joints × 3`), or 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t wogma_model_clip_len(const struct WogmaModel *model);

/**
 * Frames per clip, or 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t wogma_model_clip_frames(const struct WogmaModel *model);

/**
 * Joints per frame, or 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t wogma_model_joints(const struct WogmaModel *model);

/**
 * Probabilities produced per clip: background plus each action class.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t wogma_model_num_outputs(const struct WogmaModel *model);

/**
 * Opens a stream at the start of a video.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer. Release the
 * stream with [`wogma_stream_free`].
 */
enum WogmaStatus wogma_stream_new(const struct WogmaModel *model, struct WogmaStream **out);

/**
 * Scores the next clip. `clip` holds `clip_len` values laid out frame,
 * joint, (x, y, confidence), already normalised. The class probabilities
 * are written to `probs`, which must hold `probs_len >= num_outputs`
 * values. On error the stream is left unchanged.
 *
 * # Safety
 * `stream` must be live; `clip` and `probs` must point to at least
 * `clip_len` and `probs_len` values.
 */
enum WogmaStatus wogma_stream_push_clip(struct WogmaStream *stream,
                                        const double *clip,
                                        size_t clip_len,
                                        double *probs,
                                        size_t probs_len);

/**
 * Clips consumed so far, or 0 for null.
 *
 * # Safety
 * `stream` must be null or a live handle.
 */
size_t wogma_stream_clips_seen(const struct WogmaStream *stream);

/**
 * # Safety
 * `stream` must come from [`wogma_stream_new`] and not be freed twice.
 * Null is ignored.
 */
void wogma_stream_free(struct WogmaStream *stream);

/**
 * Intersection over union of two inclusive frame intervals.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum WogmaStatus wogma_temporal_iou(size_t a_start,
                                    size_t a_end,
                                    size_t b_start,
                                    size_t b_end,
                                    double *out);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`) and returns the full message length
 * in bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t wogma_last_error_message(char *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WOGMA_H */
