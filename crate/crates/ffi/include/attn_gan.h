#ifndef ATTN_GAN_H
#define ATTN_GAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result codes.
 */
typedef enum AgStatus {
  AG_OK = 0,
  /**
   * A required pointer was null.
   */
  AG_ERR_NULL = 1,
  /**
   * An argument was out of range or inconsistent.
   */
  AG_ERR_INVALID_ARGUMENT = 2,
  /**
   * Image dimensions do not fit the model.
   */
  AG_ERR_DIMENSION = 3,
  AG_ERR_IO = 4,
  /**
   * The checkpoint is malformed or does not match the architecture.
   */
  AG_ERR_CHECKPOINT = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  AG_ERR_INTERNAL = 6,
} AgStatus;

/**
 * Translation direction.
 */
typedef enum AgDirection {
  /**
   * Domain A to domain B.
   */
  AG_A_TO_B = 0,
  /**
   * Domain B to domain A.
   */
  AG_B_TO_A = 1,
} AgDirection;

/**
 * A pair of generators plus the configuration they were built with.
 */
typedef struct AgModel AgModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ag_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ag_version(void);

/**
 * Loads a model from a training checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AgStatus ag_model_load(const char *path, struct AgModel **out);

/**
 * Creates a freshly initialized (untrained) model.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum AgStatus ag_model_new(uint64_t seed,
                           uint32_t image_size,
                           double channel_scale,
                           struct AgModel **out);

/**
 * Writes the model (with its optimizer state) as a checkpoint.
 *
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum AgStatus ag_model_save(const struct AgModel *model, const char *path);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void ag_model_free(struct AgModel *model);

/**
 * Square image side the model expects, or 0 for a null model.
 *
 * # Safety
 * `model` must be null or come from this library.
 */
uint32_t ag_model_image_size(const struct AgModel *model);

/**
 * Total trainable parameters of both generators.
 *
 * # Safety
 * `model` must be null or come from this library.
 */
uint64_t ag_model_generator_parameters(const struct AgModel *model);

/**
 * Translates one interleaved RGB8 image of `width * height * 3` bytes.
 *
 * `out_rgb` receives the translated image (same size); `out_mask`, when not
 * null, receives `width * height` bytes of the attention mask scaled to 0..255.
 *
 * # Safety
 * Buffers must be valid for the stated sizes and must not overlap.
 */
enum AgStatus ag_translate_rgb8(const struct AgModel *model,
                                enum AgDirection direction,
                                const uint8_t *rgb,
                                uint32_t width,
                                uint32_t height,
                                uint8_t *out_rgb,
                                uint8_t *out_mask);

/**
 * Mean squared error of two RGB8 buffers of `len` bytes, in 8-bit units.
 *
 * # Safety
 * `a` and `b` must hold `len` bytes; `out` must be valid.
 */
enum AgStatus ag_mse_rgb8(const uint8_t *a, const uint8_t *b, uintptr_t len, double *out);

/**
 * PSNR in dB of two RGB8 buffers; identical inputs give +infinity.
 *
 * # Safety
 * As [`ag_mse_rgb8`].
 */
enum AgStatus ag_psnr_rgb8(const uint8_t *a, const uint8_t *b, uintptr_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ATTN_GAN_H */
