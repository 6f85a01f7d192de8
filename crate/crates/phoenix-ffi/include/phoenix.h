#ifndef PHOENIX_H
#define PHOENIX_H

/* Generated by cbindgen from phoenix-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes mirroring the CLI exit codes.
typedef enum PhoenixStatus {
  PHOENIX_STATUS_OK = 0,
  // I/O or other environment failure.
  PHOENIX_STATUS_IO = 1,
  // Invalid configuration or argument.
  PHOENIX_STATUS_CONFIG = 2,
  // Malformed file (feature file or checkpoint).
  PHOENIX_STATUS_FORMAT = 3,
  // Non-finite numerics.
  PHOENIX_STATUS_NUMERIC = 4,
  // Shape mismatch between model and data.
  PHOENIX_STATUS_STRUCTURE = 5,
  // Null pointer or panic across the boundary.
  PHOENIX_STATUS_INVALID = 6,
} PhoenixStatus;

// A feature sequence read from an `.hcfd` file (opaque).
typedef struct PhoenixFeatures PhoenixFeatures;

// A loaded checkpoint ready for scoring (opaque).
typedef struct PhoenixModel PhoenixModel;

// Scores for one utterance.
typedef struct PhoenixScore {
  // P(fake) in [0, 1].
  double p_fake;
  // Aggregated real-class logit S₋.
  double s_neg;
  // Aggregated fake-class logit S₊.
  double s_pos;
  // 1 when p_fake ≥ the checkpoint's validation-selected threshold.
  int32_t predicted_fake;
} PhoenixScore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent error on this thread. The pointer
// stays valid until the next failing call on the same thread.
const char *phoenix_last_error(void);

// Library version as a static string.
const char *phoenix_version(void);

// Loads a checkpoint produced by `phoenix train`.
//
// # Safety
// `path` must be a valid NUL-terminated string; `out` must point to
// writable storage for one pointer.
enum PhoenixStatus phoenix_model_load(const char *path, struct PhoenixModel **out);

// Releases a model handle. Null is a no-op.
//
// # Safety
// `model` must come from [`phoenix_model_load`] and not be freed twice.
void phoenix_model_free(struct PhoenixModel *model);

// Input feature dimension D the model expects.
//
// # Safety
// `model` must be a live handle from [`phoenix_model_load`].
uint32_t phoenix_model_feat_dim(const struct PhoenixModel *model);

// The checkpoint's validation-selected decision threshold.
//
// # Safety
// `model` must be a live handle from [`phoenix_model_load`].
double phoenix_model_threshold(const struct PhoenixModel *model);

// Scores one utterance given as a row-major T×D f32 buffer.
//
// # Safety
// `features` must point to `t · d` readable floats; `model` must be a
// live handle; `out` must point to writable storage for one score.
enum PhoenixStatus phoenix_model_score(const struct PhoenixModel *model,
                                       const float *features,
                                       uint32_t t,
                                       uint32_t d,
                                       struct PhoenixScore *out);

// Reads an `.hcfd` feature file into an opaque handle.
//
// # Safety
// `path` must be a valid NUL-terminated string; `out` must point to
// writable storage for one pointer.
enum PhoenixStatus phoenix_features_read(const char *path, struct PhoenixFeatures **out);

// Frame count of a loaded feature sequence.
//
// # Safety
// `features` must be a live handle from [`phoenix_features_read`].
uint32_t phoenix_features_t(const struct PhoenixFeatures *features);

// Feature dimension of a loaded feature sequence.
//
// # Safety
// `features` must be a live handle from [`phoenix_features_read`].
uint32_t phoenix_features_dim(const struct PhoenixFeatures *features);

// Borrowed pointer to the row-major T×D payload, valid while the handle
// lives.
//
// # Safety
// `features` must be a live handle from [`phoenix_features_read`].
const float *phoenix_features_data(const struct PhoenixFeatures *features);

// Convenience: read a feature file and score it in one call.
//
// # Safety
// Same requirements as [`phoenix_features_read`] and
// [`phoenix_model_score`].
enum PhoenixStatus phoenix_model_score_file(const struct PhoenixModel *model,
                                            const char *path,
                                            struct PhoenixScore *out);

// Releases a features handle. Null is a no-op.
//
// # Safety
// `features` must come from [`phoenix_features_read`] and not be freed
// twice.
void phoenix_features_free(struct PhoenixFeatures *features);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHOENIX_H */
