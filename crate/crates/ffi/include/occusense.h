#ifndef OCCUSENSE_H
#define OCCUSENSE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum OccStatus {
  OCC_STATUS_OK = 0,
  OCC_STATUS_NULL_POINTER = 1,
  OCC_STATUS_INVALID_ARGUMENT = 2,
  OCC_STATUS_CONFIG = 3,
  OCC_STATUS_DATA = 4,
  OCC_STATUS_NUMERICAL = 5,
  OCC_STATUS_PRIVACY = 6,
  OCC_STATUS_AUTHENTICATION = 7,
  OCC_STATUS_CRYPTO = 8,
  OCC_STATUS_IO = 9,
  OCC_STATUS_PANIC = 10,
} OccStatus;

/**
 * Trained estimator loaded from a checkpoint.
 */
typedef struct OccEstimator OccEstimator;

/**
 * Per-second audio front end.
 */
typedef struct OccFrontEnd OccFrontEnd;

/**
 * Byte buffer owned by the library.
 */
typedef struct OccBuffer {
  uint8_t *data;
  size_t len;
} OccBuffer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *occ_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the full message length.
 *
 * # Safety
 * `buf` must point to `len` writable bytes or be null with `len == 0`.
 */
size_t occ_last_error(char *buf, size_t len);

/**
 * Creates a front end with default settings.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum OccStatus occ_frontend_new(uint32_t sample_rate, struct OccFrontEnd **out);

/**
 * # Safety
 * `fe` must come from [`occ_frontend_new`] and not be used afterwards.
 */
void occ_frontend_free(struct OccFrontEnd *fe);

/**
 * Cells in one pooled spectrogram grid.
 */
size_t occ_grid_len(void);

/**
 * Values in one summary-statistics row.
 */
size_t occ_summary_len(void);

/**
 * Analyses exactly one second of channel-interleaved audio
 * (`frames == sample_rate`) into a speech probability, a pooled grid of
 * [`occ_grid_len`] values and a summary row of [`occ_summary_len`] values.
 *
 * # Safety
 * All pointers must be valid for the stated lengths.
 */
enum OccStatus occ_frontend_analyze(struct OccFrontEnd *fe,
                                    const double *interleaved,
                                    size_t channels,
                                    size_t frames,
                                    double *speech_prob,
                                    double *grid,
                                    double *summary);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum OccStatus occ_estimator_load(const char *path, struct OccEstimator **out);

/**
 * # Safety
 * `est` must come from [`occ_estimator_load`] and not be used afterwards.
 */
void occ_estimator_free(struct OccEstimator *est);

/**
 * Predicts occupancy for `seconds` consecutive analysed seconds. `grids`
 * and `summaries` are row-major. Seconds the estimator's gate discards are
 * written as NaN. A privatized estimator draws inference noise from OS
 * entropy, or from `noise_seed` when `seeded` is non-zero (seeding voids
 * the privacy guarantee). `epsilon_spent` receives the budget used and may
 * be null.
 *
 * # Safety
 * All pointers must be valid for the stated lengths.
 */
enum OccStatus occ_estimator_predict(const struct OccEstimator *est,
                                     const double *grids,
                                     const double *summaries,
                                     const double *speech_probs,
                                     size_t seconds,
                                     int32_t seeded,
                                     uint64_t noise_seed,
                                     double *predictions,
                                     double *epsilon_spent);

/**
 * # Safety
 * `buf` must come from this library and not be freed twice.
 */
void occ_buffer_free(struct OccBuffer buf);

/**
 * Seals `payload` to the PEM public key at `public_key_path`. The
 * serialized record is written to `out`.
 *
 * # Safety
 * Strings must be NUL-terminated; `payload` must hold `len` bytes.
 */
enum OccStatus occ_seal(const char *public_key_path,
                        const uint8_t *payload,
                        size_t len,
                        const char *type_tag,
                        uint64_t timestamp,
                        struct OccBuffer *out);

/**
 * Opens a serialized record with the PEM private key at `private_key_path`.
 *
 * # Safety
 * Strings must be NUL-terminated; `record` must hold `len` bytes.
 */
enum OccStatus occ_unseal(const char *private_key_path,
                          const uint8_t *record,
                          size_t len,
                          struct OccBuffer *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OCCUSENSE_H */
