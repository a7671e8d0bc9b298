#ifndef BAGWISE_H
#define BAGWISE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BagwiseStatus {
  BAGWISE_STATUS_OK = 0,
  BAGWISE_STATUS_NULL_POINTER = 1,
  BAGWISE_STATUS_CONFIG = 2,
  BAGWISE_STATUS_DATA = 3,
  BAGWISE_STATUS_NUMERICAL = 4,
  BAGWISE_STATUS_IO = 5,
  BAGWISE_STATUS_INVALID_UTF8 = 6,
  BAGWISE_STATUS_PANIC = 7,
} BagwiseStatus;

/*
 A trained bag classifier.
 */
typedef struct BagwiseModel BagwiseModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *bagwise_version(void);

/*
 Message of the last failure on this thread, or NULL. The pointer is
 valid until the next failing call on the same thread.
 */
const char *bagwise_last_error(void);

/*
 Trains `method` with grid-searched hyperparameters.

 Instances are the rows of the row-major `features` matrix (`dim`
 columns). Bag `i` holds rows `bag_offsets[i]..bag_offsets[i + 1]`, so
 `bag_offsets` has `n_bags + 1` entries starting at 0. `extents` holds one
 label proportion per bag. `grid_json` may be NULL for the default grid.

 # Safety
 All pointers must be valid for the stated lengths; `out` receives a new
 handle on success.
 */
enum BagwiseStatus bagwise_model_train(const char *method,
                                       const char *grid_json,
                                       const double *features,
                                       size_t dim,
                                       const size_t *bag_offsets,
                                       const double *extents,
                                       size_t n_bags,
                                       size_t cv_folds,
                                       uint64_t seed,
                                       struct BagwiseModel **out);

/*
 Loads a model JSON file written by `bagwise train` or
 [`bagwise_model_save`].

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum BagwiseStatus bagwise_model_load(const char *path, struct BagwiseModel **out);

/*
 # Safety
 `model` must be a live handle and `path` a NUL-terminated string.
 */
enum BagwiseStatus bagwise_model_save(const struct BagwiseModel *model, const char *path);

/*
 Releases a handle. NULL is ignored.

 # Safety
 `model` must come from this library and not be used afterwards.
 */
void bagwise_model_free(struct BagwiseModel *model);

/*
 Feature dimension the model expects, or 0 if it accepts any.

 # Safety
 `model` must be a live handle; `out` a valid pointer.
 */
enum BagwiseStatus bagwise_model_input_dim(const struct BagwiseModel *model, size_t *out);

/*
 Instance threshold: an instance is positive iff its probability is
 strictly above it.

 # Safety
 `model` must be a live handle; `out` a valid pointer.
 */
enum BagwiseStatus bagwise_model_threshold(const struct BagwiseModel *model, double *out);

/*
 Predicts one bag given as a row-major `n_instances x dim` matrix.
 Writes one probability per instance to `out_probs`, and, when non-NULL,
 0/1 labels to `out_labels` and the predicted extent to `out_extent`.

 # Safety
 Buffers must hold `n_instances * dim` inputs and `n_instances` outputs.
 */
enum BagwiseStatus bagwise_model_predict(const struct BagwiseModel *model,
                                         const double *features,
                                         size_t n_instances,
                                         size_t dim,
                                         double *out_probs,
                                         uint8_t *out_labels,
                                         double *out_extent);

/*
 Two-way absolute-agreement single-rater ICC of a row-major
 `cases x raters` matrix.

 # Safety
 `ratings` must hold `cases * raters` values; `out` a valid pointer.
 */
enum BagwiseStatus bagwise_icc(const double *ratings, size_t cases, size_t raters, double *out);

/*
 Extent proportion from interval indices 0..=5 (0%, 1-5%, 6-25%, 26-50%,
 51-75%, 76-100%): the mean of the interval midpoints.

 # Safety
 `intervals` must hold `n` values; `out` a valid pointer.
 */
enum BagwiseStatus bagwise_combine_raters(const uint32_t *intervals, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BAGWISE_H */
