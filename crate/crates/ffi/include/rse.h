#ifndef RSE_H
#define RSE_H

#include <stddef.h>
#include <stdint.h>

typedef enum RseStatus {
  RSE_STATUS_OK = 0,
  RSE_STATUS_NULL_POINTER = 1,
  RSE_STATUS_INVALID_ARGUMENT = 2,
  RSE_STATUS_IO = 3,
  RSE_STATUS_FORMAT = 4,
  RSE_STATUS_GEOMETRY = 5,
  RSE_STATUS_CHECKPOINT = 6,
  RSE_STATUS_RUNTIME = 7,
  RSE_STATUS_PANIC = 8,
} RseStatus;

// Opaque handle to a loaded checkpoint.
typedef struct RseModel RseModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads a checkpoint directory. On success `*out` owns a handle that must
// be released with [`rse_model_free`].
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` a valid pointer.
enum RseStatus rse_model_load(const char *path, struct RseModel **out);

// Releases a handle from [`rse_model_load`]. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void rse_model_free(struct RseModel *model);

// Patch size and overlap the model was trained with.
//
// # Safety
// All pointers must be valid.
enum RseStatus rse_model_geometry(const struct RseModel *model, size_t *patch, size_t *overlap);

// Denoises a `height` x `width` RGB8 image into `output`. Both buffers
// hold `height * width * 3` bytes and may not overlap.
//
// # Safety
// `input` and `output` must be valid for `height * width * 3` bytes.
enum RseStatus rse_denoise_rgb8(const struct RseModel *model,
                                const uint8_t *input,
                                size_t height,
                                size_t width,
                                uint8_t *output);

// PSNR in dB between two RGB8 images; identical images give +infinity.
//
// # Safety
// `a` and `b` must be valid for `height * width * 3` bytes, `out` for one double.
enum RseStatus rse_psnr_rgb8(const uint8_t *a,
                             const uint8_t *b,
                             size_t height,
                             size_t width,
                             double *out);

// Message for the last failed call on this thread, or null. Valid until
// the next call into this library from the same thread.
const char *rse_last_error(void);

// Library version as a static string.
const char *rse_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RSE_H */
