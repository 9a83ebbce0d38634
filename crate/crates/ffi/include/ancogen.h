#ifndef ANCOGEN_H
#define ANCOGEN_H

/* Generated by cbindgen from crates/ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AncogenEditKind {
  /**
   * Percent change of voiced f0.
   */
  ANCOGEN_EDIT_KIND_PITCH_SHIFT = 0,
  ANCOGEN_EDIT_KIND_SET_SNR = 1,
  ANCOGEN_EDIT_KIND_SET_C50 = 2,
  ANCOGEN_EDIT_KIND_SCALE_LOUDNESS = 3,
  /**
   * 1-based label passed as a whole number.
   */
  ANCOGEN_EDIT_KIND_SET_SPEAKER = 4,
} AncogenEditKind;

typedef enum AncogenStatus {
  ANCOGEN_STATUS_OK = 0,
  ANCOGEN_STATUS_NULL_POINTER = 1,
  ANCOGEN_STATUS_INVALID_ARGUMENT = 2,
  ANCOGEN_STATUS_IO = 3,
  ANCOGEN_STATUS_MANIFEST_MISMATCH = 4,
  ANCOGEN_STATUS_UNTRAINED = 5,
  ANCOGEN_STATUS_RUNTIME = 6,
  ANCOGEN_STATUS_PANIC = 7,
} AncogenStatus;

typedef enum AncogenTrack {
  ANCOGEN_TRACK_F0 = 0,
  ANCOGEN_TRACK_LOUDNESS = 1,
  ANCOGEN_TRACK_SNR = 2,
  ANCOGEN_TRACK_C50 = 3,
} AncogenTrack;

/**
 * Analysis result on the mel frame grid.
 */
typedef struct AncogenAttributes AncogenAttributes;

/**
 * Mono 16 kHz samples.
 */
typedef struct AncogenAudio AncogenAudio;

/**
 * Loaded tokenizer, VQ-VAE and MAE.
 */
typedef struct AncogenPipeline AncogenPipeline;

typedef struct AncogenEdit {
  enum AncogenEditKind kind;
  double value;
} AncogenEdit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *ancogen_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ancogen_version(void);

uint32_t ancogen_sample_rate(void);

/**
 * Loads a model directory. `mae_checkpoint` may be null for
 * `<model_dir>/mae.ckpt`.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum AncogenStatus ancogen_pipeline_load(const char *model_dir,
                                         const char *mae_checkpoint,
                                         struct AncogenPipeline **out);

/**
 * # Safety
 * `p` must be null or a handle from [`ancogen_pipeline_load`] not yet freed.
 */
void ancogen_pipeline_free(struct AncogenPipeline *p);

/**
 * Samples per model segment, or 0 for a null handle.
 *
 * # Safety
 * `p` must be null or a live pipeline handle.
 */
size_t ancogen_pipeline_segment_samples(const struct AncogenPipeline *p);

/**
 * # Safety
 * `p` must be a live pipeline; `samples` must point to `len` readable
 * values; `out` must be writable.
 */
enum AncogenStatus ancogen_analyze(const struct AncogenPipeline *p,
                                   const double *samples,
                                   size_t len,
                                   struct AncogenAttributes **out);

/**
 * # Safety
 * `a` must be null or a handle from [`ancogen_analyze`] not yet freed.
 */
void ancogen_attributes_free(struct AncogenAttributes *a);

/**
 * Frames per track, or 0 for a null handle.
 *
 * # Safety
 * `a` must be null or a live attributes handle.
 */
size_t ancogen_attributes_frames(const struct AncogenAttributes *a);

/**
 * 1-based speaker label, or 0 for a null handle.
 *
 * # Safety
 * `a` must be null or a live attributes handle.
 */
uint32_t ancogen_attributes_speaker(const struct AncogenAttributes *a);

/**
 * Copies up to `cap` values of a track into `buf`; `written` receives the
 * count. Fails with `INVALID_ARGUMENT` when `cap` is smaller than the track.
 *
 * # Safety
 * `a` must be a live handle; `buf` must have room for `cap` values;
 * `written` must be writable.
 */
enum AncogenStatus ancogen_attributes_track(const struct AncogenAttributes *a,
                                            enum AncogenTrack track,
                                            double *buf,
                                            size_t cap,
                                            size_t *written);

/**
 * Analysis, edits, generation and inversion. `report_json` may be null;
 * otherwise it receives a string to release with [`ancogen_string_free`].
 *
 * # Safety
 * `p` must be a live pipeline; `samples` must point to `len` values;
 * `edits` must point to `n_edits` entries (or be null when zero); `out`
 * must be writable.
 */
enum AncogenStatus ancogen_resynthesize(const struct AncogenPipeline *p,
                                        const double *samples,
                                        size_t len,
                                        const struct AncogenEdit *edits,
                                        size_t n_edits,
                                        struct AncogenAudio **out,
                                        char **report_json);

/**
 * Pointer to the samples, valid while the handle lives; `len` receives the
 * count. Null for a null handle.
 *
 * # Safety
 * `a` must be null or a live audio handle; `len` must be null or writable.
 */
const double *ancogen_audio_samples(const struct AncogenAudio *a, size_t *len);

/**
 * # Safety
 * `a` must be null or a handle from [`ancogen_resynthesize`] not yet freed.
 */
void ancogen_audio_free(struct AncogenAudio *a);

/**
 * # Safety
 * `s` must be null or a string returned by this library not yet freed.
 */
void ancogen_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ANCOGEN_H */
