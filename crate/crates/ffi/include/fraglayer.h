#ifndef FRAGLAYER_H
#define FRAGLAYER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes of every exported function.
 */
typedef enum FlStatus {
  FL_STATUS_OK = 0,
  FL_STATUS_NULL_POINTER = 1,
  FL_STATUS_INVALID_UTF8 = 2,
  FL_STATUS_INVALID_ARGUMENT = 3,
  FL_STATUS_MANIFEST = 4,
  FL_STATUS_SCREENSHOT = 5,
  FL_STATUS_CHECKPOINT = 6,
  FL_STATUS_MODEL = 7,
  FL_STATUS_IO = 8,
  FL_STATUS_PANIC = 9,
} FlStatus;

/*
 A parsed artboard and its optional screenshot.
 */
typedef struct FlArtboard FlArtboard;

/*
 A loaded detector checkpoint.
 */
typedef struct FlDetector FlDetector;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failure on this thread; empty after a success. The
 pointer stays valid until the next call on the same thread.
 */
const char *fl_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *fl_version(void);

/*
 Parses a manifest of `len` bytes into a new artboard handle.

 # Safety
 `json` must point to `len` readable bytes and `out` must be writable.
 */
enum FlStatus fl_artboard_parse(const uint8_t *json, size_t len, struct FlArtboard **out);

/*
 Attaches a binary PPM screenshot matching the artboard size.

 # Safety
 `artboard` must be a live handle; `ppm` must point to `len` readable bytes.
 */
enum FlStatus fl_artboard_set_screenshot(struct FlArtboard *artboard,
                                         const uint8_t *ppm,
                                         size_t len);

/*
 Number of layers in the artboard.

 # Safety
 `artboard` must be a live handle and `out` writable.
 */
enum FlStatus fl_artboard_layer_count(const struct FlArtboard *artboard, size_t *out);

/*
 Releases an artboard handle; null is ignored.

 # Safety
 `artboard` must be null or a handle not yet freed.
 */
void fl_artboard_free(struct FlArtboard *artboard);

/*
 Loads a checkpoint file into a new detector handle.

 # Safety
 `path` must be a NUL-terminated string and `out` writable.
 */
enum FlStatus fl_detector_load(const char *path, struct FlDetector **out);

/*
 Sets the probability at or above which a layer is labeled fragmented.

 # Safety
 `detector` must be a live handle.
 */
enum FlStatus fl_detector_set_threshold(struct FlDetector *detector, double threshold);

/*
 Releases a detector handle; null is ignored.

 # Safety
 `detector` must be null or a handle not yet freed.
 */
void fl_detector_free(struct FlDetector *detector);

/*
 Detection JSON for every window of the artboard.

 # Safety
 Both handles must be live and `out_json` writable.
 */
enum FlStatus fl_detect(const struct FlDetector *detector,
                        const struct FlArtboard *artboard,
                        char **out_json);

/*
 Merge JSON from detection JSON, or from the artboard's own labels when
 `detections_json` is null.

 # Safety
 `artboard` must be live, `detections_json` null or NUL-terminated, and
 `out_json` writable.
 */
enum FlStatus fl_merge(const struct FlArtboard *artboard,
                       const char *detections_json,
                       double tau,
                       char **out_json);

/*
 Releases a string returned by this library; null is ignored.

 # Safety
 `s` must be null or a string returned by this library and not yet freed.
 */
void fl_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRAGLAYER_H */
