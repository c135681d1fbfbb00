// Copyright (c) the quip authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


/* C interface to the quip library. Every function that can fail returns a
 * quip_status; on failure quip_last_error() describes the cause. Handles
 * are opaque, owned by the caller, and released with the matching _free
 * function (which accepts NULL). Distinct handles may be used from
 * different threads; one handle must not be mutated concurrently. */

#ifndef QUIP_QUIP_H_
#define QUIP_QUIP_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define QUIP_EXPORT __declspec(dllexport)
#else
#define QUIP_EXPORT __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum quip_status {
  QUIP_OK = 0,
  QUIP_ERROR_ARGUMENT = 1,
  QUIP_ERROR_SHAPE = 2,
  QUIP_ERROR_NUMERIC = 3,
  QUIP_ERROR_IO = 4,
  QUIP_ERROR_FORMAT = 5,
  QUIP_ERROR_INTERNAL = 6
} quip_status;

typedef struct quip_config quip_config;
typedef struct quip_image quip_image;
typedef struct quip_model quip_model;
typedef struct quip_report quip_report;

/* Message of the last failed call on this thread; valid until the next
 * failing call on the same thread. Empty string when there was none. */
QUIP_EXPORT const char* quip_last_error(void);
QUIP_EXPORT const char* quip_version(void);
QUIP_EXPORT const char* quip_status_name(quip_status status);

/* ---- configuration ---------------------------------------------------- */

QUIP_EXPORT quip_status quip_config_create(quip_config** out);
QUIP_EXPORT void quip_config_free(quip_config* config);
/* "section.key" or a unique bare key; unknown keys fail. */
QUIP_EXPORT quip_status quip_config_set(quip_config* config, const char* key, const char* value);
/* Applies every entry of a "key = value" file with [section] headers. */
QUIP_EXPORT quip_status quip_config_load(quip_config* config, const char* path);
/* Current text of `key` (its fallback when unset; empty when derived). */
QUIP_EXPORT quip_status quip_config_get(const quip_config* config, const char* key, char* buffer, size_t size);
QUIP_EXPORT quip_status quip_config_validate(const quip_config* config);
QUIP_EXPORT size_t quip_config_warning_count(const quip_config* config);
/* Copies warning `index` into `buffer` (truncated, always terminated). */
QUIP_EXPORT quip_status quip_config_warning(const quip_config* config, size_t index, char* buffer, size_t size);
QUIP_EXPORT size_t quip_config_key_count(void);
QUIP_EXPORT const char* quip_config_key(size_t index);
QUIP_EXPORT const char* quip_config_key_help(size_t index);

/* ---- images ----------------------------------------------------------- */

/* Copies height * width row-major values. */
QUIP_EXPORT quip_status quip_image_create(size_t height, size_t width, const double* pixels, quip_image** out);
/* PNG (8/16-bit grayscale) or binary PGM, by extension. */
QUIP_EXPORT quip_status quip_image_load(const char* path, quip_image** out);
/* bit_depth 8 or 16. */
QUIP_EXPORT quip_status quip_image_save(const quip_image* image, const char* path, int bit_depth);
QUIP_EXPORT void quip_image_free(quip_image* image);
QUIP_EXPORT size_t quip_image_height(const quip_image* image);
QUIP_EXPORT size_t quip_image_width(const quip_image* image);
QUIP_EXPORT const double* quip_image_pixels(const quip_image* image);

/* ---- metrics ---------------------------------------------------------- */

/* `border` pixels are dropped on each side before scoring. */
QUIP_EXPORT quip_status quip_psnr(const quip_image* reference, const quip_image* test, size_t border, double* out);
QUIP_EXPORT quip_status quip_ssim(const quip_image* reference, const quip_image* test, size_t border, double* out);
/* "PSNR/SSIM" with two decimals and SSIM in percent, e.g. "32.92/95.41". */
QUIP_EXPORT quip_status quip_format_score(double psnr, double ssim, char* buffer, size_t size);

/* ---- degradation and the classical baseline --------------------------- */

/* Synthesizes a degraded observation of `clean` from the [degradation]
 * settings with the given seed. `network_input` (same size as `clean`) is
 * the restoration input; `observed` (may be NULL) is the raw observation,
 * low-resolution for the downsampling kinds. */
QUIP_EXPORT quip_status quip_degrade(const quip_config* config, const quip_image* clean, uint64_t seed,
                                     quip_image** network_input, quip_image** observed);

QUIP_EXPORT quip_status quip_dequip(const quip_config* config, const quip_image* input, quip_image** out);

/* ---- models ----------------------------------------------------------- */

/* Randomly initialized from the [model] settings and model.seed. */
QUIP_EXPORT quip_status quip_model_create(const quip_config* config, quip_model** out);
/* Every parameter zero: the residual is 0 and restoration is the identity. */
QUIP_EXPORT quip_status quip_model_create_zero(const quip_config* config, quip_model** out);
QUIP_EXPORT quip_status quip_model_load(const char* path, quip_model** out);
QUIP_EXPORT quip_status quip_model_save(const quip_model* model, const char* path);
QUIP_EXPORT void quip_model_free(quip_model* model);
/* 1 for restoration models (neutralization layer present), 0 otherwise. */
QUIP_EXPORT int quip_model_restores(const quip_model* model);
QUIP_EXPORT size_t quip_model_parameter_count(const quip_model* model);
QUIP_EXPORT quip_status quip_model_describe(const quip_model* model, char* buffer, size_t size);
QUIP_EXPORT quip_status quip_model_restore(const quip_model* model, const quip_image* input, quip_image** restored);

/* ---- training --------------------------------------------------------- */

typedef struct quip_epoch {
  size_t epoch; /* 1-based */
  double lr;
  double train_loss;
  double val_psnr; /* NaN without a validation set */
  double val_ssim;
  double seconds;
} quip_epoch;

typedef void (*quip_log_fn)(const char* line, void* user);

/* Trains `model` in place from the [train] and [degradation] settings.
 * With validation == NULL the validation set is split from `images` by
 * train.validation_fraction. `checkpoint` (may be NULL) receives the
 * best-validation weights. `log` (may be NULL) receives one line per
 * epoch and warnings. */
QUIP_EXPORT quip_status quip_train(const quip_config* config, quip_model* model, const quip_image* const* images,
                                   size_t count, const quip_image* const* validation, size_t validation_count,
                                   const char* checkpoint, quip_log_fn log, void* user, quip_report** out);
QUIP_EXPORT void quip_report_free(quip_report* report);
QUIP_EXPORT size_t quip_report_epoch_count(const quip_report* report);
QUIP_EXPORT quip_status quip_report_epoch(const quip_report* report, size_t index, quip_epoch* out);
QUIP_EXPORT size_t quip_report_best_epoch(const quip_report* report);
QUIP_EXPORT size_t quip_report_batch_count(const quip_report* report);
QUIP_EXPORT double quip_report_batch_loss(const quip_report* report, size_t index);
/* Tab-separated results file: epoch, lr, train-loss, val-psnr, val-ssim, seconds. */
QUIP_EXPORT quip_status quip_report_write(const quip_report* report, const char* path);

/* ---- verification ----------------------------------------------------- */

typedef struct quip_gradcheck_group {
  char name[64];
  size_t coordinates;
  double max_relative_error;
} quip_gradcheck_group;

/* End-to-end finite-difference check of every parameter group on an 8x8
 * image (n = 3, W = 7, kappa <= 4, d = 2). Writes up to `capacity`
 * groups and the total number in `count`. */
QUIP_EXPORT quip_status quip_gradcheck(uint64_t seed, int neutralization, quip_gradcheck_group* groups,
                                       size_t capacity, size_t* count);

#ifdef __cplusplus
}
#endif

#endif /* QUIP_QUIP_H_ */
