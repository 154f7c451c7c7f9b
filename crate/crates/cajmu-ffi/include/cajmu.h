#ifndef CAJMU_H
#define CAJMU_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum CajmuStatus {
  CajmuStatusOk = 0,
  CajmuStatusVerification = 1,
  CajmuStatusInvalid = 2,
  CajmuStatusMissing = 3,
  CajmuStatusIncompatible = 4,
  CajmuStatusNullArgument = 5,
  CajmuStatusBadUtf8 = 6,
  CajmuStatusPanic = 7,
} CajmuStatus;

/**
 * Opaque tracker handle: loaded checkpoint plus, once initialized, a live
 * tracking session.
 */
typedef struct CajmuTracker CajmuTracker;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent error on this thread. The pointer is
 * valid until the next failing call on the same thread.
 *
 * # Safety
 * The returned pointer must not be freed.
 */
const char *cajmu_last_error_message(void);

/**
 * Create a tracker from a checkpoint file. `config_json` may be null for
 * defaults; `variant` is one of "identity", "cls-only", "reg-only",
 * "joint", "full".
 *
 * # Safety
 * `checkpoint_path` and `variant` must be valid NUL-terminated strings;
 * `config_json` may be null; `out` must be a valid pointer.
 */
enum CajmuStatus cajmu_tracker_new(const char *checkpoint_path,
                                   const char *config_json,
                                   const char *variant,
                                   uint64_t seed,
                                   struct CajmuTracker **out);

/**
 * Initialize tracking on the first frame with a ground-truth box given as
 * (center-x, center-y, width, height) in pixels. Frame data is row-major
 * channel-height-width, 64-bit floats.
 *
 * # Safety
 * `tracker` must be a live handle; `frame` must point to
 * `channels * height * width` doubles.
 */
enum CajmuStatus cajmu_tracker_init(struct CajmuTracker *tracker,
                                    const double *frame,
                                    uintptr_t channels,
                                    uintptr_t height,
                                    uintptr_t width,
                                    double cx,
                                    double cy,
                                    double w,
                                    double h);

/**
 * Track one frame. Writes (center-x, center-y, width, height) into
 * `out_box` and the peak score into `out_confidence` (either may be null
 * if unwanted).
 *
 * # Safety
 * `tracker` must be a live, initialized handle; `frame` must point to
 * `channels * height * width` doubles; `out_box`, when non-null, must
 * point to at least 4 doubles.
 */
enum CajmuStatus cajmu_tracker_track(struct CajmuTracker *tracker,
                                     const double *frame,
                                     uintptr_t channels,
                                     uintptr_t height,
                                     uintptr_t width,
                                     double *out_box,
                                     double *out_confidence);

/**
 * Destroy a tracker handle. Null is a no-op.
 *
 * # Safety
 * `tracker` must be null or a pointer returned by `cajmu_tracker_new`
 * that has not been freed.
 */
void cajmu_tracker_free(struct CajmuTracker *tracker);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAJMU_H */
