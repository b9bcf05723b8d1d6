#ifndef MIXGAN_H
#define MIXGAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define MIXGAN_OK 0

#define MIXGAN_ERR_NULL 1

#define MIXGAN_ERR_PARAMETER 2

#define MIXGAN_ERR_SHAPE 3

#define MIXGAN_ERR_NUMERIC 4

#define MIXGAN_ERR_DATA 5

#define MIXGAN_ERR_CHECKPOINT 6

#define MIXGAN_ERR_CAPABILITY 7

#define MIXGAN_ERR_IO 8

#define MIXGAN_ERR_PANIC 9

#define MIXGAN_STRATEGY_NONE 0

#define MIXGAN_STRATEGY_MIXUP 1

#define MIXGAN_STRATEGY_CUTMIX 2

#define MIXGAN_STRATEGY_SRMIX 3

/**
 * Generator and discriminator restored from a checkpoint.
 */
typedef struct MixganModel MixganModel;

/**
 * Seeded random stream.
 */
typedef struct MixganRng MixganRng;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the calling thread's most recent failure; empty if
 * there was none. Owned by the library.
 */
const char *mixgan_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mixgan_version(void);

/**
 * New random stream; release with `mixgan_rng_free`.
 */
struct MixganRng *mixgan_rng_new(uint64_t seed);

/**
 * # Safety
 * `rng` must come from `mixgan_rng_new` and not be used afterwards.
 */
void mixgan_rng_free(struct MixganRng *rng);

/**
 * Samples one `[height, width]` mask into `out`. `alpha` is the Beta
 * concentration used by Mixup.
 *
 * # Safety
 * `rng` must be a live handle and `out` must hold `height * width` doubles.
 */
int32_t mixgan_sample_mask(struct MixganRng *rng,
                           int32_t strategy_code,
                           size_t height,
                           size_t width,
                           double alpha,
                           double *out);

/**
 * `out = mask * a + (1 - mask) * b` for one `[channels, height, width]`
 * image pair and a `[height, width]` mask.
 *
 * # Safety
 * `a`, `b` and `out` hold `channels * height * width` doubles, `mask` holds
 * `height * width`.
 */
int32_t mixgan_mix(const double *a,
                   const double *b,
                   const double *mask,
                   size_t channels,
                   size_t height,
                   size_t width,
                   double *out);

/**
 * Builds a discriminator fake-slot batch: the first `floor(ratio * batch)`
 * entries mix real `i` with fake `i`, the rest are the fakes. The number
 * of mixed entries is written to `mixed_out`.
 *
 * # Safety
 * `reals`, `fakes` and `out` hold `batch * channels * height * width`
 * doubles; `mixed_out` may be null.
 */
int32_t mixgan_compose_batch(struct MixganRng *rng,
                             const double *reals,
                             const double *fakes,
                             size_t batch,
                             size_t channels,
                             size_t height,
                             size_t width,
                             int32_t strategy_code,
                             double ratio,
                             double *out,
                             size_t *mixed_out);

/**
 * Fréchet distance between `N(mean_a, cov_a)` and `N(mean_b, cov_b)`.
 *
 * # Safety
 * Means hold `dim` doubles, covariances `dim * dim` (row-major).
 */
int32_t mixgan_frechet_distance(const double *mean_a,
                                const double *cov_a,
                                const double *mean_b,
                                const double *cov_b,
                                size_t dim,
                                double *out);

/**
 * Loads a checkpoint; release with `mixgan_model_free`.
 *
 * # Safety
 * `path` is a NUL-terminated UTF-8 string; `out` is writable.
 */
int32_t mixgan_model_load(const char *path, struct MixganModel **out);

/**
 * # Safety
 * `model` must come from `mixgan_model_load` and not be used afterwards.
 */
void mixgan_model_free(struct MixganModel *model);

/**
 * Image resolution, latent size and completed generator iterations. Any
 * output pointer may be null.
 *
 * # Safety
 * `model` must be a live handle.
 */
int32_t mixgan_model_info(const struct MixganModel *model,
                          size_t *resolution,
                          size_t *z_dim,
                          uint64_t *iteration);

/**
 * Generates `n` images from latents `z` (`[n, z_dim]`) in evaluation mode.
 *
 * # Safety
 * `z` holds `n * z_dim` doubles, `out` holds `n * 3 * R * R`.
 */
int32_t mixgan_model_generate(struct MixganModel *model, const double *z, size_t n, double *out);

/**
 * Discriminator scores of `n` images at the model resolution.
 *
 * # Safety
 * `images` holds `n * 3 * R * R` doubles, `out` holds `n`.
 */
int32_t mixgan_model_score(const struct MixganModel *model,
                           const double *images,
                           size_t n,
                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIXGAN_H */
