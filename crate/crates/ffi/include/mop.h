#ifndef MOP_H
#define MOP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call. Values 2 to 4 match the `mop` exit codes.
 */
typedef enum MopStatus {
  MOP_STATUS_OK = 0,
  MOP_STATUS_INVALID_ARGUMENT = 2,
  MOP_STATUS_MISMATCH = 3,
  MOP_STATUS_NUMERICAL = 4,
  MOP_STATUS_NOT_FOUND = 5,
  MOP_STATUS_FORMAT = 6,
  MOP_STATUS_IO = 7,
  MOP_STATUS_NULL_POINTER = 8,
  MOP_STATUS_BUFFER_TOO_SMALL = 9,
  MOP_STATUS_PANIC = 10,
} MopStatus;

/**
 * Pooling method codes accepted where a `method` argument is taken.
 */
typedef enum MopPoolingMethod {
  MOP_POOLING_METHOD_AVERAGE = 0,
  MOP_POOLING_METHOD_MAX = 1,
  MOP_POOLING_METHOD_VLAD = 2,
} MopPoolingMethod;

typedef struct MopCodebook MopCodebook;

typedef struct MopPca MopPca;

typedef struct MopPipeline MopPipeline;

typedef struct MopStore MopStore;

typedef struct MopToyEmbedder MopToyEmbedder;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *mop_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mop_version(void);

/**
 * Number of patches of side `side` on a `frame` grid with `stride`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MopStatus mop_grid_count(size_t frame, size_t side, size_t stride, size_t *out);

/**
 * Number of sliding windows over all `sides`.
 *
 * # Safety
 * `sides` must point to `n_sides` values and `out` be valid.
 */
enum MopStatus mop_sliding_window_count(size_t frame,
                                        const size_t *sides,
                                        size_t n_sides,
                                        size_t stride,
                                        size_t *out);

/**
 * Fits PCA on `n` row-major samples of dimension `d`.
 *
 * # Safety
 * `samples` must point to `n * d` values and `out` be valid.
 */
enum MopStatus mop_pca_fit(const double *samples,
                           size_t n,
                           size_t d,
                           size_t d_out,
                           struct MopPca **out);

/**
 * # Safety
 * `pca` must come from `mop_pca_fit` and not be used afterwards.
 */
void mop_pca_free(struct MopPca *pca);

/**
 * # Safety
 * Pointer arguments must be valid.
 */
enum MopStatus mop_pca_dims(const struct MopPca *pca, size_t *input_dim, size_t *output_dim);

/**
 * Enables or disables whitening with the given epsilon.
 *
 * # Safety
 * `pca` must be a live handle.
 */
enum MopStatus mop_pca_set_whitening(struct MopPca *pca, bool whiten, double epsilon);

/**
 * Projects one vector.
 *
 * # Safety
 * `v` must point to `len` values, `out` to `capacity` values.
 */
enum MopStatus mop_pca_transform(const struct MopPca *pca,
                                 const double *v,
                                 size_t len,
                                 double *out,
                                 size_t capacity,
                                 size_t *out_len);

/**
 * k-means++ seeded Lloyd iterations on `n` row-major samples.
 *
 * # Safety
 * `samples` must point to `n * d` values and `out` be valid.
 */
enum MopStatus mop_kmeans_fit(const double *samples,
                              size_t n,
                              size_t d,
                              size_t k,
                              uint64_t seed,
                              size_t max_iters,
                              struct MopCodebook **out);

/**
 * Wraps `k` row-major centers of dimension `d`.
 *
 * # Safety
 * `centers` must point to `k * d` values and `out` be valid.
 */
enum MopStatus mop_codebook_new(const double *centers,
                                size_t k,
                                size_t d,
                                struct MopCodebook **out);

/**
 * # Safety
 * `book` must come from this library and not be used afterwards.
 */
void mop_codebook_free(struct MopCodebook *book);

/**
 * Copies the centers out, row-major.
 *
 * # Safety
 * Pointer arguments must be valid; `out` holds `capacity` values.
 */
enum MopStatus mop_codebook_centers(const struct MopCodebook *book,
                                    size_t *k,
                                    size_t *d,
                                    double *out,
                                    size_t capacity,
                                    size_t *out_len);

/**
 * Unnormalized soft-assignment VLAD of `n` patches against `book`.
 *
 * # Safety
 * `patches` must point to `n * book.dim` values, `out` to `capacity`.
 */
enum MopStatus mop_vlad_encode(const struct MopCodebook *book,
                               size_t r,
                               double sigma,
                               const double *patches,
                               size_t n,
                               double *out,
                               size_t capacity,
                               size_t *out_len);

/**
 * Signed power `alpha` then L2 normalization, in place.
 *
 * # Safety
 * `v` must point to `len` writable values.
 */
enum MopStatus mop_normalize(double *v, size_t len, double alpha);

/**
 * Average precision of a ranking given per-rank hit flags (nonzero =
 * relevant) and the size of the relevant set.
 *
 * # Safety
 * `hits` must point to `n` bytes and `out` be valid.
 */
enum MopStatus mop_average_precision(const uint8_t *hits, size_t n, size_t n_relevant, double *out);

/**
 * Mean of `n` average precisions.
 *
 * # Safety
 * `aps` must point to `n` values and `out` be valid.
 */
enum MopStatus mop_mean_average_precision(const double *aps, size_t n, double *out);

/**
 * Loads a fitted pipeline model written by `mop fit`.
 *
 * # Safety
 * `model_path` must be a NUL-terminated string and `out` valid.
 */
enum MopStatus mop_pipeline_load(const char *model_path, struct MopPipeline **out);

/**
 * # Safety
 * `pipeline` must come from `mop_pipeline_load` and not be used afterwards.
 */
void mop_pipeline_free(struct MopPipeline *pipeline);

/**
 * Hex fingerprint as a NUL-terminated string; `capacity` must be at least
 * 65 bytes.
 *
 * # Safety
 * `out` must point to `capacity` writable bytes.
 */
enum MopStatus mop_pipeline_fingerprint(const struct MopPipeline *pipeline,
                                        char *out,
                                        size_t capacity);

/**
 * Descriptor length the model expects and the encoded length for `method`
 * under the model's configured strategy.
 *
 * # Safety
 * Pointer arguments must be valid.
 */
enum MopStatus mop_pipeline_dims(const struct MopPipeline *pipeline,
                                 int32_t method_code,
                                 size_t *descriptor_dim,
                                 size_t *encoded_dim);

/**
 * Loads an activation store (MOPD matrix plus JSON manifest).
 *
 * # Safety
 * Paths must be NUL-terminated strings and `out` valid.
 */
enum MopStatus mop_store_load(const char *matrix_path,
                              const char *manifest_path,
                              struct MopStore **out);

/**
 * # Safety
 * `store` must come from `mop_store_load` and not be used afterwards.
 */
void mop_store_free(struct MopStore *store);

/**
 * Encodes one stored image.
 *
 * # Safety
 * `image_id` must be NUL-terminated; `out` holds `capacity` values.
 */
enum MopStatus mop_pipeline_encode_stored(const struct MopPipeline *pipeline,
                                          const struct MopStore *store,
                                          const char *image_id,
                                          int32_t method_code,
                                          double *out,
                                          size_t capacity,
                                          size_t *out_len);

/**
 * Creates the random-projection toy embedder.
 *
 * # Safety
 * `out` must be valid.
 */
enum MopStatus mop_toy_embedder_new(size_t thumb_side,
                                    size_t out_dim,
                                    uint64_t projection_seed,
                                    struct MopToyEmbedder **out);

/**
 * # Safety
 * `embedder` must come from `mop_toy_embedder_new` and not be used afterwards.
 */
void mop_toy_embedder_free(struct MopToyEmbedder *embedder);

/**
 * Encodes an 8-bit interleaved image already in the model's normalized
 * frame (`width == height == frame`) using the toy embedder.
 *
 * # Safety
 * `pixels` must point to `width * height * channels` bytes and `out` to
 * `capacity` values.
 */
enum MopStatus mop_pipeline_encode_pixels(const struct MopPipeline *pipeline,
                                          const struct MopToyEmbedder *embedder,
                                          const uint8_t *pixels,
                                          size_t width,
                                          size_t height,
                                          size_t channels,
                                          int32_t method_code,
                                          double *out,
                                          size_t capacity,
                                          size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOP_H */
