#ifndef DSNET_H
#define DSNET_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Call outcome. The first four values match the command line exit codes.
 */
typedef enum DsnetStatus {
  DSNET_STATUS_OK = 0,
  DSNET_STATUS_USAGE = 1,
  DSNET_STATUS_DATA = 2,
  DSNET_STATUS_NUMERIC = 3,
  DSNET_STATUS_NULL_POINTER = 4,
  DSNET_STATUS_INVALID_UTF8 = 5,
  DSNET_STATUS_BUFFER_TOO_SMALL = 6,
  DSNET_STATUS_PANIC = 7,
} DsnetStatus;

/**
 * Trained network parameters plus architecture.
 */
typedef struct DsnetModel DsnetModel;

/**
 * A spectral cube with labels and, when synthesized, ground-truth abundances.
 */
typedef struct DsnetScene DsnetScene;

typedef struct DsnetDims {
  size_t bands;
  size_t rows;
  size_t cols;
  /**
   * Highest label in the scene, or the model's class count.
   */
  size_t classes;
  /**
   * Endmember count; 0 for scenes without ground truth.
   */
  size_t endmembers;
} DsnetDims;

typedef struct DsnetMetrics {
  double oa;
  double aa;
  double kappa;
} DsnetMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *dsnet_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *dsnet_version(void);

/**
 * Synthesizes a scene. `spec_json` may be null for the default scene; any
 * keys it gives override the defaults.
 *
 * # Safety
 * `spec_json` must be null or a nul-terminated string; `out` must be valid
 * for writes.
 */
enum DsnetStatus dsnet_scene_generate(const char *spec_json,
                                      uint64_t seed,
                                      struct DsnetScene **out);

/**
 * Wraps caller data: `cube` is band-sequential `[bands, rows, cols]`,
 * `labels` is `[rows, cols]` with 0 for unlabeled pixels.
 *
 * # Safety
 * `cube` and `labels` must hold `bands * rows * cols` and `rows * cols`
 * values; `out` must be valid for writes.
 */
enum DsnetStatus dsnet_scene_from_arrays(size_t bands,
                                         size_t rows,
                                         size_t cols,
                                         const double *cube,
                                         const uint16_t *labels,
                                         struct DsnetScene **out);

/**
 * # Safety
 * `scene` must come from this library and not be used afterwards.
 */
void dsnet_scene_free(struct DsnetScene *scene);

/**
 * # Safety
 * `scene` must be a live handle; `out` must be valid for writes.
 */
enum DsnetStatus dsnet_scene_dims(const struct DsnetScene *scene, struct DsnetDims *out);

/**
 * Copies the cube, band-sequential.
 *
 * # Safety
 * `scene` must be a live handle; `out` must hold `len` values.
 */
enum DsnetStatus dsnet_scene_cube(const struct DsnetScene *scene, double *out, size_t len);

/**
 * # Safety
 * `scene` must be a live handle; `out` must hold `len` values.
 */
enum DsnetStatus dsnet_scene_labels(const struct DsnetScene *scene, uint16_t *out, size_t len);

/**
 * Ground-truth abundances `[endmembers, rows, cols]`; a data error for
 * scenes built from caller arrays.
 *
 * # Safety
 * `scene` must be a live handle; `out` must hold `len` values.
 */
enum DsnetStatus dsnet_scene_abundances(const struct DsnetScene *scene, double *out, size_t len);

/**
 * Splits the scene's labeled pixels, trains, and scores the held-out part.
 * `config_json` uses the configuration file schema (`seed`, `split`,
 * `train`); null means defaults. `metrics` may be null.
 *
 * # Safety
 * `scene` must be a live handle; `config_json` null or nul-terminated;
 * `out` valid for writes; `metrics` null or valid for writes.
 */
enum DsnetStatus dsnet_model_train(const struct DsnetScene *scene,
                                   const char *config_json,
                                   struct DsnetModel **out,
                                   struct DsnetMetrics *metrics);

/**
 * Loads a checkpoint written by the command line tool or
 * [`dsnet_model_save`], at the precision it was saved with.
 *
 * # Safety
 * `path` must be nul-terminated; `out` valid for writes.
 */
enum DsnetStatus dsnet_model_load(const char *path_str, struct DsnetModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` nul-terminated.
 */
enum DsnetStatus dsnet_model_save(const struct DsnetModel *model, const char *path_str);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void dsnet_model_free(struct DsnetModel *model);

/**
 * Input bands, classes and endmembers of the model; rows and cols are the
 * patch size.
 *
 * # Safety
 * `model` must be a live handle; `out` valid for writes.
 */
enum DsnetStatus dsnet_model_dims(const struct DsnetModel *model, struct DsnetDims *out);

/**
 * Predicted 1-based class of every pixel, row-major `[rows, cols]`.
 *
 * # Safety
 * Both handles must be live; `out` must hold `len` values.
 */
enum DsnetStatus dsnet_model_classify(struct DsnetModel *model,
                                      const struct DsnetScene *scene,
                                      uint16_t *out,
                                      size_t len);

/**
 * Estimated abundances `[endmembers, rows, cols]` over the whole scene.
 *
 * # Safety
 * Both handles must be live; `out` must hold `len` values.
 */
enum DsnetStatus dsnet_model_abundances(struct DsnetModel *model,
                                        const struct DsnetScene *scene,
                                        double *out,
                                        size_t len);

/**
 * OA, AA and Kappa of a row-major `classes x classes` confusion matrix,
 * rows indexed by true class.
 *
 * # Safety
 * `counts` must hold `classes * classes` values; `out` valid for writes.
 */
enum DsnetStatus dsnet_metrics_from_counts(const uint64_t *counts,
                                           size_t classes,
                                           struct DsnetMetrics *out);

/**
 * Spectral angle in radians between two spectra of length `len`.
 *
 * # Safety
 * `u` and `w` must hold `len` values; `out` valid for writes.
 */
enum DsnetStatus dsnet_sad(const double *u, const double *w, size_t len, double *out);

/**
 * Learning rate at a 0-based epoch under step decay.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum DsnetStatus dsnet_lr_at(size_t epoch,
                             double lr0,
                             double decay_factor,
                             size_t decay_every,
                             double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* DSNET_H */
