#ifndef NDF_H
#define NDF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NdfStatus {
  NDF_STATUS_OK = 0,
  NDF_STATUS_NULL_POINTER = 1,
  NDF_STATUS_INVALID_ARGUMENT = 2,
  NDF_STATUS_IO = 3,
  /**
   * Malformed or incompatible dataset, checkpoint or buffer contents.
   */
  NDF_STATUS_DATA = 4,
  /**
   * Rendering or numerical failure.
   */
  NDF_STATUS_COMPUTE = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  NDF_STATUS_PANIC = 6,
} NdfStatus;

/**
 * A loaded or generated multi-view dataset.
 */
typedef struct NdfDataset NdfDataset;

/**
 * Trained field networks with the settings they were trained with.
 */
typedef struct NdfModel NdfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call on the same thread.
 */
const char *ndf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ndf_version(void);

/**
 * Generates the synthetic scene at `width` x `height` with `frames`
 * frames (0 keeps the default) and the given seed.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum NdfStatus ndf_dataset_generate(uint32_t width,
                                    uint32_t height,
                                    size_t frames,
                                    uint64_t seed,
                                    struct NdfDataset **out);

/**
 * Loads a dataset directory written by `ndf gen-scene`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` a valid handle pointer.
 */
enum NdfStatus ndf_dataset_load(const char *dir, struct NdfDataset **out);

/**
 * # Safety
 * `ds` must come from this library; `dir` must be NUL-terminated.
 */
enum NdfStatus ndf_dataset_save(const struct NdfDataset *ds, const char *dir, bool force);

/**
 * Writes the frame count, camera count and image size. Any output
 * pointer may be null.
 *
 * # Safety
 * `ds` must come from this library.
 */
enum NdfStatus ndf_dataset_info(const struct NdfDataset *ds,
                                size_t *frames,
                                size_t *cameras,
                                uint32_t *width,
                                uint32_t *height);

/**
 * Copies a ground-truth image as row-major interleaved RGB into `out`,
 * which must hold at least `3 * width * height` doubles.
 *
 * # Safety
 * `ds` must come from this library; `out` must point to `len` doubles.
 */
enum NdfStatus ndf_dataset_image(const struct NdfDataset *ds,
                                 size_t frame,
                                 size_t camera,
                                 double *out,
                                 size_t len);

/**
 * # Safety
 * `ds` must come from this library or be null; it must not be used afterwards.
 */
void ndf_dataset_free(struct NdfDataset *ds);

/**
 * Loads a training checkpoint.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` a valid handle pointer.
 */
enum NdfStatus ndf_model_load(const char *path, struct NdfModel **out);

/**
 * Untrained networks sized for `ds`, initialized from `seed`.
 *
 * # Safety
 * `ds` must come from this library; `out` a valid handle pointer.
 */
enum NdfStatus ndf_model_init(const struct NdfDataset *ds, uint64_t seed, struct NdfModel **out);

/**
 * # Safety
 * `model` must come from this library.
 */
enum NdfStatus ndf_model_iteration(const struct NdfModel *model, uint64_t *out);

/**
 * # Safety
 * `model` must come from this library or be null; it must not be used afterwards.
 */
void ndf_model_free(struct NdfModel *model);

/**
 * Renders dataset frame `frame` from dataset camera `camera` into `out`
 * (row-major interleaved RGB, `3 * width * height` doubles).
 *
 * # Safety
 * Handles must come from this library; `out` must point to `len` doubles.
 * The dataset handle caches per-frame geometry, so it must not be used
 * from two threads at once.
 */
enum NdfStatus ndf_render(const struct NdfModel *model,
                          struct NdfDataset *ds,
                          size_t frame,
                          size_t camera,
                          double *out,
                          size_t len);

/**
 * PSNR of two `width` x `height` RGB images in `[0,1]`; identical images
 * give +infinity.
 *
 * # Safety
 * `a` and `b` must each point to `3 * width * height` doubles.
 */
enum NdfStatus ndf_psnr(const double *a,
                        const double *b,
                        uint32_t width,
                        uint32_t height,
                        double *out);

/**
 * SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels.
 *
 * # Safety
 * `a` and `b` must each point to `3 * width * height` doubles.
 */
enum NdfStatus ndf_ssim(const double *a,
                        const double *b,
                        uint32_t width,
                        uint32_t height,
                        double *out);

/**
 * Composites `n` samples front to back over `background` (3 doubles).
 * `colors` holds `3 * n` doubles. Writes the pixel to `out_rgb` and the
 * accumulated opacity to `out_opacity` (may be null).
 *
 * # Safety
 * Pointers must reference buffers of the stated lengths.
 */
enum NdfStatus ndf_composite(const double *sigmas,
                             const double *colors,
                             const double *deltas,
                             size_t n,
                             const double *background,
                             double *out_rgb,
                             double *out_opacity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NDF_H */
