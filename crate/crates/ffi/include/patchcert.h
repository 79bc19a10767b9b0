#ifndef PATCHCERT_H
#define PATCHCERT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PcAttackerMode {
  PC_ATTACKER_MODE_FN = 0,
  PC_ATTACKER_MODE_FP = 1,
  PC_ATTACKER_MODE_WORST = 2,
} PcAttackerMode;

typedef enum PcStatus {
  PC_STATUS_OK = 0,
  PC_STATUS_NULL_POINTER = 1,
  PC_STATUS_INVALID_ARGUMENT = 2,
  PC_STATUS_CONFIG = 3,
  PC_STATUS_SHAPE = 4,
  PC_STATUS_BACKEND = 5,
  PC_STATUS_INTERNAL = 6,
  PC_STATUS_PANIC = 7,
} PcStatus;

typedef struct PcImage PcImage;

typedef struct PcMaskSet PcMaskSet;

typedef struct PcModel PcModel;

// Certified bounds for one image.
typedef struct PcCertSummary {
  size_t tp_lower;
  size_t fp_upper;
  size_t fn_upper;
  // Location-aware false-negative bound.
  size_t fn_new;
  // Location-aware false-positive bound.
  size_t fp_new;
  // Location-aware true-positive bound.
  size_t tp_location;
  // 1 when a single mask attains both location-aware bounds.
  uint8_t realizable;
} PcCertSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until the
// next call into this library on the same thread.
const char *pc_last_error_message(void);

// # Safety
// `s` must be null or a string returned by this library, not yet freed.
void pc_string_free(char *s);

// Synthetic model from its JSON description.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum PcStatus pc_model_from_synthetic_json(const char *json, struct PcModel **out);

#if defined(PATCHCERT_ONNX)
// ONNX model taking `[1, channels, height, width]` input.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum PcStatus pc_model_load_onnx(const char *path,
                                 size_t height,
                                 size_t width,
                                 size_t channels,
                                 uint8_t logits,
                                 struct PcModel **out);
#endif

// Number of classes, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t pc_model_num_classes(const struct PcModel *model);

// # Safety
// `model` must be null or a live handle; it is invalid afterwards.
void pc_model_free(struct PcModel *model);

// Image from `n1 * n2 * channels` row-major HWC values in `[0, 1]`.
//
// # Safety
// `data` must point to `len` floats; `out` must be writable.
enum PcStatus pc_image_new(size_t n1,
                           size_t n2,
                           size_t channels,
                           const float *data,
                           size_t len,
                           struct PcImage **out);

// # Safety
// `image` must be null or a live handle; it is invalid afterwards.
void pc_image_free(struct PcImage *image);

// Covering mask set for a `p1 x p2` patch with at most `k1 x k2` masks.
//
// # Safety
// `out` must be writable.
enum PcStatus pc_mask_set_generate(size_t n1,
                                   size_t n2,
                                   size_t p1,
                                   size_t p2,
                                   size_t k1,
                                   size_t k2,
                                   struct PcMaskSet **out);

// Number of masks, or 0 for a null handle.
//
// # Safety
// `masks` must be null or a live handle.
size_t pc_mask_set_len(const struct PcMaskSet *masks);

// 1 when every patch placement lies inside some mask, 0 otherwise or for a
// null handle.
//
// # Safety
// `masks` must be null or a live handle.
uint8_t pc_mask_set_is_covering(const struct PcMaskSet *masks);

// JSON layout of the mask set; free with [`pc_string_free`].
//
// # Safety
// `masks` must be a live handle; `out` must be writable.
enum PcStatus pc_mask_set_to_json(const struct PcMaskSet *masks, char **out);

// # Safety
// `masks` must be null or a live handle; it is invalid afterwards.
void pc_mask_set_free(struct PcMaskSet *masks);

// Defended prediction; writes one 0/1 byte per class into `labels_out`.
//
// # Safety
// Handles must be live; `labels_out` must hold `num_classes` bytes.
enum PcStatus pc_demux_infer(const struct PcModel *model,
                             const struct PcImage *image,
                             const struct PcMaskSet *masks,
                             double threshold,
                             uint8_t *labels_out,
                             size_t num_classes);

// Certify against ground truth `labels` (one 0/1 byte per class). When
// `json_out` is non-null it receives the full summary, including
// vulnerability arrays, as JSON; free it with [`pc_string_free`].
//
// # Safety
// Handles must be live; `labels` must hold `num_classes` bytes; `out` must
// be writable.
enum PcStatus pc_demux_certify(const struct PcModel *model,
                               const struct PcImage *image,
                               const struct PcMaskSet *masks,
                               const uint8_t *labels,
                               size_t num_classes,
                               double threshold,
                               enum PcAttackerMode mode,
                               struct PcCertSummary *out,
                               char **json_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PATCHCERT_H */
