#ifndef GEOPOSE_H
#define GEOPOSE_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum GpStatus {
  GP_STATUS_OK = 0,
  GP_STATUS_NULL_POINTER = 1,
  GP_STATUS_INVALID_ARGUMENT = 2,
  GP_STATUS_IO = 3,
  GP_STATUS_FORMAT = 4,
  GP_STATUS_GEOMETRY = 5,
  GP_STATUS_NO_SOLUTION = 6,
  GP_STATUS_CONFIG = 7,
  GP_STATUS_PANIC = 8,
} GpStatus;

/**
 * Opaque triangle mesh.
 */
typedef struct GpMesh GpMesh;

/**
 * Opaque template set.
 */
typedef struct GpTemplateSet GpTemplateSet;

/**
 * Pinhole intrinsics; pixel centers at integer coordinates.
 */
typedef struct GpCamera {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
} GpCamera;

/**
 * Rigid transform, row-major 4x4 (model to camera).
 */
typedef struct GpPose {
  double m[16];
} GpPose;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *gp_last_error(void);

/**
 * Library version as a static string.
 */
const char *gp_version(void);

/**
 * The `index`-th procedural benchmark object for `seed`.
 */
enum GpStatus gp_mesh_procedural(uint32_t index, uint64_t seed, struct GpMesh **out);

/**
 * Loads an ASCII or binary PLY with an optional JSON sidecar (symmetries,
 * texture); `sidecar` may be null.
 */
enum GpStatus gp_mesh_load(const char *ply, const char *sidecar, struct GpMesh **out);

enum GpStatus gp_mesh_diameter(const struct GpMesh *mesh, double *out);

void gp_mesh_free(struct GpMesh *mesh);

/**
 * Renders `n` templates of `mesh` framed for queries seen through `cam`.
 */
enum GpStatus gp_templates_build(const struct GpMesh *mesh,
                                 const struct GpCamera *cam,
                                 uint32_t n,
                                 uint64_t seed,
                                 struct GpTemplateSet **out);

enum GpStatus gp_templates_load(const char *dir, struct GpTemplateSet **out);

enum GpStatus gp_templates_save(const struct GpTemplateSet *set, const char *dir);

enum GpStatus gp_templates_count(const struct GpTemplateSet *set, uint32_t *out);

void gp_templates_free(struct GpTemplateSet *set);

/**
 * Coarse pose of the object in a query crop with intrinsics `cam` (same
 * size as the templates), voting over the `k` best templates.
 */
enum GpStatus gp_estimate_coarse(const float *rgb,
                                 const uint8_t *mask,
                                 const struct GpCamera *cam,
                                 const struct GpMesh *mesh,
                                 const struct GpTemplateSet *set,
                                 uint32_t k,
                                 uint64_t seed,
                                 struct GpPose *out);

/**
 * Geometric refinement of `initial` against the query crop with the
 * default configuration and `iterations` steps.
 */
enum GpStatus gp_refine(const float *rgb,
                        const uint8_t *mask,
                        const struct GpCamera *cam,
                        const struct GpMesh *mesh,
                        const struct GpPose *initial,
                        uint32_t iterations,
                        uint64_t seed,
                        struct GpPose *out);

/**
 * Symmetry-aware maximum surface distance, model units.
 */
enum GpStatus gp_mssd(const struct GpPose *pred,
                      const struct GpPose *gt,
                      const struct GpMesh *mesh,
                      double *out);

/**
 * Symmetry-aware maximum projection distance, pixels.
 */
enum GpStatus gp_mspd(const struct GpPose *pred,
                      const struct GpPose *gt,
                      const struct GpMesh *mesh,
                      const struct GpCamera *cam,
                      double *out);

/**
 * Visible surface discrepancy in [0, 1]; `tau` and `delta` in model units.
 */
enum GpStatus gp_vsd(const struct GpPose *pred,
                     const struct GpPose *gt,
                     const struct GpMesh *mesh,
                     const struct GpCamera *cam,
                     double tau,
                     double delta,
                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GEOPOSE_H */
