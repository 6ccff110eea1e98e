#ifndef HAIRSPLAT_H
#define HAIRSPLAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum HsStatus {
  HS_STATUS_OK = 0,
  HS_STATUS_NULL_POINTER = 1,
  HS_STATUS_INVALID_INPUT = 2,
  HS_STATUS_SHAPE = 3,
  HS_STATUS_UNDERDETERMINED = 4,
  HS_STATUS_DEGENERATE = 5,
  HS_STATUS_STATE = 6,
  HS_STATUS_DIVERGED = 7,
  HS_STATUS_FORMAT = 8,
  HS_STATUS_CONFIG = 9,
  HS_STATUS_IO = 10,
  HS_STATUS_BUFFER_TOO_SMALL = 11,
  HS_STATUS_PANIC = 12,
} HsStatus;

// Strand PCA basis.
typedef struct HsBasis HsBasis;

// Pinhole camera.
typedef struct HsCamera HsCamera;

// Hair map of per-texel coefficients and baldness.
typedef struct HsHairMap HsHairMap;

// Ellipsoidal head with a scalp cap.
typedef struct HsHead HsHead;

// Rendered silhouette, direction and depth images.
typedef struct HsRender HsRender;

// Rasterizer and model settings for `hs_render`.
typedef struct HsRenderOptions {
  // Dense strands per guide along each scalp axis.
  size_t upsample;
  double width_scale;
  double epsilon;
  double opacity;
  double cutoff;
  double screen_blur;
} HsRenderOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *hs_version(void);

// Copies the calling thread's last error message into `buf` (truncated and
// always NUL-terminated when `len > 0`). Returns the full message length
// including the terminator, or 0 when the last call succeeded.
//
// # Safety
// `buf` must point to `len` writable bytes or be null with `len == 0`.
size_t hs_last_error_message(char *buf, size_t len);

// Defaults matching the command-line tool.
struct HsRenderOptions hs_render_options_default(void);

// Fits a basis to `strand_count` strands of `point_count` points each,
// stored back to back in `points`.
//
// # Safety
// `points` must hold `strand_count * point_count * 3` doubles; `out` must be
// writable.
enum HsStatus hs_basis_fit(const double *points,
                           size_t strand_count,
                           size_t point_count,
                           size_t num_components,
                           struct HsBasis **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum HsStatus hs_basis_read(const char *path_, struct HsBasis **out);

// # Safety
// `basis` must be a live handle; `path` a NUL-terminated string.
enum HsStatus hs_basis_write(const struct HsBasis *basis, const char *path_);

// Points per strand, or 0 for a null handle.
//
// # Safety
// `basis` must be a live handle or null.
size_t hs_basis_point_count(const struct HsBasis *basis);

// Number of components, or 0 for a null handle.
//
// # Safety
// `basis` must be a live handle or null.
size_t hs_basis_num_components(const struct HsBasis *basis);

// # Safety
// `basis` must come from this library and not be used afterwards.
void hs_basis_free(struct HsBasis *basis);

// Projects one strand onto the basis. `points` holds `point_count * 3`
// doubles; `gamma` receives `num_components` coefficients.
//
// # Safety
// Pointers must be valid for the stated lengths.
enum HsStatus hs_encode(const struct HsBasis *basis,
                        const double *points,
                        size_t point_count,
                        double *gamma,
                        size_t gamma_len);

// Reconstructs a strand from `gamma_len` coefficients into `points`, which
// must hold `point_count * 3` doubles.
//
// # Safety
// Pointers must be valid for the stated lengths.
enum HsStatus hs_decode(const struct HsBasis *basis,
                        const double *gamma,
                        size_t gamma_len,
                        double *points,
                        size_t points_len);

// Builds a `width` x `height` map with `num_components` coefficients per
// texel (texel-major) and one baldness value per texel.
//
// # Safety
// `coeffs` must hold `width * height * num_components` doubles and
// `baldness` `width * height`; `out` must be writable.
enum HsStatus hs_hairmap_new(size_t width,
                             size_t height,
                             size_t num_components,
                             const double *coeffs,
                             const double *baldness,
                             struct HsHairMap **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum HsStatus hs_hairmap_read(const char *path_, struct HsHairMap **out);

// # Safety
// `map` must be a live handle; `path` a NUL-terminated string.
enum HsStatus hs_hairmap_write(const struct HsHairMap *map, const char *path_);

// Writes the map's width, height and component count; any output may be
// null.
//
// # Safety
// `map` must be a live handle; non-null outputs must be writable.
enum HsStatus hs_hairmap_dims(const struct HsHairMap *map,
                              size_t *width,
                              size_t *height,
                              size_t *num_components);

// Copies the coefficients (texel-major) into `out`.
//
// # Safety
// `map` must be a live handle and `out` valid for `len` doubles.
enum HsStatus hs_hairmap_coeffs(const struct HsHairMap *map, double *out, size_t len);

// # Safety
// `map` must come from this library and not be used afterwards.
void hs_hairmap_free(struct HsHairMap *map);

// The default head: an origin-centred ellipsoid with radii (0.9, 1.0, 1.1).
//
// # Safety
// `out` must be writable.
enum HsStatus hs_head_default(struct HsHead **out);

// Ellipsoid with the given centre and radii; the scalp spans polar angles
// `[cap_min, cap_max]` measured from +z.
//
// # Safety
// `center` and `radii` must each hold 3 doubles; `out` must be writable.
enum HsStatus hs_head_new(const double *center,
                          const double *radii,
                          double cap_min,
                          double cap_max,
                          struct HsHead **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum HsStatus hs_head_read(const char *path_, struct HsHead **out);

// # Safety
// `head` must come from this library and not be used afterwards.
void hs_head_free(struct HsHead *head);

// Pinhole camera. `rotation` is the row-major world-to-camera matrix and
// `translation` its offset, so `x_cam = R x + t`.
//
// # Safety
// `rotation` must hold 9 doubles and `translation` 3; `out` must be writable.
enum HsStatus hs_camera_new(double fx,
                            double fy,
                            double cx,
                            double cy,
                            const double *rotation,
                            const double *translation,
                            size_t width,
                            size_t height,
                            struct HsCamera **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum HsStatus hs_camera_read(const char *path_, struct HsCamera **out);

// # Safety
// `camera` must come from this library and not be used afterwards.
void hs_camera_free(struct HsCamera *camera);

// Decodes `map` through `basis` on `head`, upsamples and rasterizes it
// from `camera`. A null `options` uses `hs_render_options_default`.
//
// # Safety
// Handles must be live; `options` valid or null; `out` writable.
enum HsStatus hs_render(const struct HsBasis *basis,
                        const struct HsHairMap *map,
                        const struct HsHead *head,
                        const struct HsCamera *camera,
                        const struct HsRenderOptions *options,
                        struct HsRender **out);

// # Safety
// `render` must be a live handle; non-null outputs must be writable.
enum HsStatus hs_render_size(const struct HsRender *render, size_t *width, size_t *height);

// Silhouette in [0, 1], one value per pixel.
//
// # Safety
// `render` must be a live handle and `out` valid for `len` doubles.
enum HsStatus hs_render_silhouette(const struct HsRender *render, double *out, size_t len);

// Screen-space strand direction, two values per pixel.
//
// # Safety
// `render` must be a live handle and `out` valid for `len` doubles.
enum HsStatus hs_render_direction(const struct HsRender *render, double *out, size_t len);

// Depth per pixel; `valid` (optional) receives 1 where depth is defined.
//
// # Safety
// `render` must be a live handle, `out` valid for `len` doubles and `valid`
// null or valid for `len` bytes.
enum HsStatus hs_render_depth(const struct HsRender *render,
                              double *out,
                              uint8_t *valid,
                              size_t len);

// Writes the render as PFM/PGM files into directory `dir`.
//
// # Safety
// `render` must be a live handle; `dir` a NUL-terminated string.
enum HsStatus hs_render_write(const struct HsRender *render, const char *dir);

// # Safety
// `render` must come from this library and not be used afterwards.
void hs_render_free(struct HsRender *render);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HAIRSPLAT_H */
