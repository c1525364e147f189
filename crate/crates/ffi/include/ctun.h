/* C API for the CTUN video super-resolution engine. */

#ifndef CTUN_H
#define CTUN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of a C API call.
 */
typedef enum ctun_status {
  CTUN_STATUS_OK = 0,
  /*
   A pointer argument was null.
   */
  CTUN_STATUS_NULL_POINTER = 1,
  /*
   An argument was outside the documented domain.
   */
  CTUN_STATUS_INVALID_ARGUMENT = 2,
  /*
   The operation itself failed; see `ctun_last_error_message`.
   */
  CTUN_STATUS_RUNTIME_ERROR = 3,
} ctun_status;

/*
 Opaque engine handle: a model configuration plus its weights.
 */
typedef struct ctun_engine ctun_engine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copy the most recent error message for this thread into `buf` (NUL
 terminated, truncated to `cap`). Returns the full message length.

 # Safety
 `buf` must point to `cap` writable bytes, or be null (query mode).
 */
uintptr_t ctun_last_error_message(char *buf, uintptr_t cap);

/*
 Library version string; static storage, do not free.
 */
const char *ctun_version(void);

/*
 Create an engine with freshly initialized (seeded) weights.

 # Safety
 `out` must be a valid pointer to an engine-handle slot.
 */
enum ctun_status ctun_engine_create(uint32_t channels,
                                    uint32_t blocks_extractor,
                                    uint32_t blocks_propagation,
                                    uint32_t blocks_reconstruction,
                                    uint32_t scale,
                                    bool shared_ugru,
                                    uint64_t seed,
                                    struct ctun_engine **out);

/*
 Create an engine from a weight file. The configuration must match the
 file's tensors.

 # Safety
 `weights_path` must be a NUL-terminated string and `out` a valid slot.
 */
enum ctun_status ctun_engine_load(const char *weights_path,
                                  uint32_t channels,
                                  uint32_t blocks_extractor,
                                  uint32_t blocks_propagation,
                                  uint32_t blocks_reconstruction,
                                  uint32_t scale,
                                  bool shared_ugru,
                                  struct ctun_engine **out);

/*
 Destroy an engine created by `ctun_engine_create` or `ctun_engine_load`.
 Null is ignored.

 # Safety
 `engine` must be a handle from this library, destroyed at most once.
 */
void ctun_engine_destroy(struct ctun_engine *engine);

/*
 Save the engine's weights in the binary weight-file format.

 # Safety
 `engine` must be a live handle; `path` a NUL-terminated string.
 */
enum ctun_status ctun_engine_save(const struct ctun_engine *engine, const char *path);

/*
 Upscaling factor of the engine.

 # Safety
 `engine` must be a live handle.
 */
uint32_t ctun_engine_scale(const struct ctun_engine *engine);

/*
 Total trainable parameter count of the engine's configuration.

 # Safety
 `engine` must be a live handle.
 */
uintptr_t ctun_engine_param_count(const struct ctun_engine *engine);

/*
 Super-resolve `n_frames` of planar RGB (NCHW, values in [0,1]).

 `frames` holds n_frames * 3 * height * width floats; `out` must have room
 for n_frames * 3 * (scale*height) * (scale*width) floats. Frames stream
 through the engine one at a time.

 # Safety
 `engine` must be a live handle and both buffers must match the documented
 lengths.
 */
enum ctun_status ctun_engine_super_resolve(const struct ctun_engine *engine,
                                           const float *frames,
                                           uintptr_t n_frames,
                                           uintptr_t height,
                                           uintptr_t width,
                                           float *out);

/*
 PSNR between two equal-length buffers, in dB, capped at 99.0 for
 identical inputs. `peak` is the signal maximum (255 for 8-bit).

 # Safety
 Both buffers must hold `len` floats; `out` must be a valid slot.
 */
enum ctun_status ctun_psnr(const float *a, const float *b, uintptr_t len, double peak, double *out);

/*
 Single-scale SSIM between two single-channel images in 0-255 units.

 # Safety
 Both buffers must hold `height * width` floats; `out` must be valid.
 */
enum ctun_status ctun_ssim(const float *a,
                           const float *b,
                           uintptr_t height,
                           uintptr_t width,
                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTUN_H */
