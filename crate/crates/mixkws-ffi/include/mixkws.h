/* C ABI for the mixkws keyword-spotting toolkit. */

#ifndef MIXKWS_H
#define MIXKWS_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible function.
 */
typedef enum MixkwsStatus {
  MIXKWS_STATUS_OK = 0,
  MIXKWS_STATUS_NULL_POINTER = 1,
  MIXKWS_STATUS_INVALID_ARGUMENT = 2,
  MIXKWS_STATUS_UTF8 = 3,
  MIXKWS_STATUS_IO = 4,
  MIXKWS_STATUS_FORMAT = 5,
  MIXKWS_STATUS_NUMERIC = 6,
  MIXKWS_STATUS_DEGENERATE = 7,
} MixkwsStatus;

/**
 * Opaque log-mel feature matrix handle.
 */
typedef struct MixkwsFeatures MixkwsFeatures;

/**
 * Opaque trained model handle.
 */
typedef struct MixkwsModel MixkwsModel;

/**
 * Opaque mono waveform handle.
 */
typedef struct MixkwsWaveform MixkwsWaveform;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message for this thread; empty string when no error has been
 * recorded. The pointer stays valid until the next failing call on the
 * same thread.
 */
const char *mixkws_last_error_message(void);

/**
 * Static name of a status code (e.g. "ok", "invalid-argument").
 */
const char *mixkws_status_name(enum MixkwsStatus status);

/**
 * Build a waveform from raw samples in [-1, 1].
 *
 * # Safety
 * `samples` must point to `len` readable doubles; `out` must be a valid
 * pointer to a waveform handle slot.
 */
enum MixkwsStatus mixkws_waveform_from_samples(const double *samples,
                                               size_t len,
                                               uint32_t sample_rate_hz,
                                               struct MixkwsWaveform **out);

/**
 * Load a 16-bit PCM mono WAV file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
enum MixkwsStatus mixkws_waveform_load(const char *path, struct MixkwsWaveform **out);

/**
 * Save a waveform as 16-bit PCM mono WAV.
 *
 * # Safety
 * `wave` must be a live handle; `path` must be NUL-terminated.
 */
enum MixkwsStatus mixkws_waveform_save(const struct MixkwsWaveform *wave, const char *path);

/**
 * Deterministic synthetic keyword audio at 16 kHz (see the toolkit docs).
 *
 * # Safety
 * `out` must be a valid pointer to a waveform handle slot.
 */
enum MixkwsStatus mixkws_synth_keyword(uint32_t keyword_id,
                                       uint64_t variant_seed,
                                       double duration_s,
                                       struct MixkwsWaveform **out);

/**
 * Convex superposition `w1*a + w2*b` (weights must sum to 1, each >= 0);
 * the shorter input is zero-padded.
 *
 * # Safety
 * `a`, `b` must be live handles; `out` must be valid.
 */
enum MixkwsStatus mixkws_mix_waveforms(const struct MixkwsWaveform *a,
                                       const struct MixkwsWaveform *b,
                                       double w1,
                                       double w2,
                                       struct MixkwsWaveform **out);

/**
 * Number of samples (0 for a null handle).
 *
 * # Safety
 * `wave` must be a live handle or null.
 */
size_t mixkws_waveform_len(const struct MixkwsWaveform *wave);

/**
 * Sample rate in Hz (0 for a null handle).
 *
 * # Safety
 * `wave` must be a live handle or null.
 */
uint32_t mixkws_waveform_sample_rate(const struct MixkwsWaveform *wave);

/**
 * Copy samples into a caller buffer of at least `capacity` doubles.
 *
 * # Safety
 * `buffer` must point to `capacity` writable doubles.
 */
enum MixkwsStatus mixkws_waveform_copy_samples(const struct MixkwsWaveform *wave,
                                               double *buffer,
                                               size_t capacity);

/**
 * Free a waveform handle (null is a no-op).
 *
 * # Safety
 * `wave` must be a handle from this library, not yet freed.
 */
void mixkws_waveform_free(struct MixkwsWaveform *wave);

/**
 * 80-dimensional log-mel features (25 ms window, 10 ms hop).
 *
 * # Safety
 * `wave` must be a live handle; `out` must be valid.
 */
enum MixkwsStatus mixkws_fbank(const struct MixkwsWaveform *wave, struct MixkwsFeatures **out);

/**
 * Number of frames (0 for a null handle).
 *
 * # Safety
 * `features` must be a live handle or null.
 */
size_t mixkws_features_num_frames(const struct MixkwsFeatures *features);

/**
 * Feature dimensionality (80; 0 for a null handle).
 *
 * # Safety
 * `features` must be a live handle or null.
 */
size_t mixkws_features_num_bins(const struct MixkwsFeatures *features);

/**
 * Copy the row-major `frames x bins` matrix into a caller buffer.
 *
 * # Safety
 * `buffer` must point to `capacity` writable doubles.
 */
enum MixkwsStatus mixkws_features_copy(const struct MixkwsFeatures *features,
                                       double *buffer,
                                       size_t capacity);

/**
 * Free a feature handle (null is a no-op).
 *
 * # Safety
 * `features` must be a handle from this library, not yet freed.
 */
void mixkws_features_free(struct MixkwsFeatures *features);

/**
 * Pooled equal error rate over `len` detection entries. `is_target[i]` is
 * nonzero when entry `i` belongs to a keyword truly present.
 *
 * # Safety
 * `scores` and `is_target` must point to `len` readable elements; `out`
 * must be writable.
 */
enum MixkwsStatus mixkws_compute_eer(const double *scores,
                                     const uint8_t *is_target,
                                     size_t len,
                                     double *out);

/**
 * Load a model checkpoint produced by the toolkit.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be valid.
 */
enum MixkwsStatus mixkws_model_load(const char *path, struct MixkwsModel **out);

/**
 * Number of keyword detectors in the model head (0 for a null handle).
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t mixkws_model_num_keywords(const struct MixkwsModel *model);

/**
 * Score a waveform: writes one sigmoid detection score per keyword into
 * `scores` (needs capacity >= `mixkws_model_num_keywords`).
 *
 * # Safety
 * `model` and `wave` must be live handles; `scores` must point to
 * `capacity` writable doubles.
 */
enum MixkwsStatus mixkws_model_score(const struct MixkwsModel *model,
                                     const struct MixkwsWaveform *wave,
                                     double *scores,
                                     size_t capacity);

/**
 * Free a model handle (null is a no-op).
 *
 * # Safety
 * `model` must be a handle from this library, not yet freed.
 */
void mixkws_model_free(struct MixkwsModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIXKWS_H */
