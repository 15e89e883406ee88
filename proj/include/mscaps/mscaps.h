/* C interface to the multiscale capsule network change detector.
 *
 * Every call returns an mscaps_status. On failure the message is available
 * from mscaps_last_error() until the next call on the same thread. Objects
 * are opaque handles owned by the caller and released with the matching
 * *_free function (which accepts NULL).
 */
#ifndef MSCAPS_H
#define MSCAPS_H

#include <stddef.h>
#include <stdint.h>

#if defined(MSCAPS_BUILDING_LIBRARY)
#define MSCAPS_API __attribute__((visibility("default")))
#else
#define MSCAPS_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mscaps_status {
  MSCAPS_OK = 0,
  MSCAPS_ERR_INVALID_ARGUMENT = 1,
  MSCAPS_ERR_SHAPE = 2,
  MSCAPS_ERR_NON_FINITE = 3,
  MSCAPS_ERR_IO = 4,
  MSCAPS_ERR_CORRUPT = 5,
  MSCAPS_ERR_VERSION = 6,
  MSCAPS_ERR_STATE = 7,
  MSCAPS_ERR_INTERNAL = 8,
  MSCAPS_ERR_CHECK_FAILED = 9
} mscaps_status;

typedef enum mscaps_variant {
  MSCAPS_VARIANT_CAPSNET = 0,
  MSCAPS_VARIANT_NO_AFC = 1,
  MSCAPS_VARIANT_NO_MULTISCALE = 2,
  MSCAPS_VARIANT_FULL = 3
} mscaps_variant;

typedef struct mscaps_scene mscaps_scene;
typedef struct mscaps_model mscaps_model;
typedef struct mscaps_map mscaps_map;

typedef struct mscaps_synth_params {
  uint32_t size;
  uint32_t regions;
  double looks;
  double contrast;
  uint64_t seed;
} mscaps_synth_params;

typedef struct mscaps_train_options {
  mscaps_variant variant;
  uint32_t patch;
  uint32_t samples;
  uint32_t epochs;
  uint32_t batch;
  double learning_rate;
  uint64_t seed;
  uint32_t threads;
  int balanced;          /* nonzero: 50/50 changed/unchanged sampling */
  int input_pair;        /* nonzero: two-date input channels instead of the DI */
  int route_grad_full;   /* nonzero: differentiate through every routing iteration */
  int shared_capsules;   /* nonzero: both scales share capsule transforms */
  int shared_attention;  /* nonzero: one attention kernel for all AFC branches */
  uint32_t routing_iterations;
  double transform_init; /* bound of the uniform capsule transform init */
  double eps;            /* log-ratio offset */
} mscaps_train_options;

typedef struct mscaps_metrics {
  uint64_t fp;
  uint64_t fn;
  uint64_t tp;
  uint64_t tn;
  uint64_t oe;
  double pcc;
  double kc;
} mscaps_metrics;

/* Per-epoch progress: epoch number, mean loss, training accuracy in [0,1]. */
typedef void (*mscaps_epoch_fn)(uint32_t epoch, double loss, double accuracy, void* user);
/* One line of human-readable output. */
typedef void (*mscaps_line_fn)(const char* line, void* user);

MSCAPS_API const char* mscaps_last_error(void);
MSCAPS_API const char* mscaps_version(void);
MSCAPS_API const char* mscaps_variant_name(mscaps_variant variant);
MSCAPS_API mscaps_status mscaps_parse_variant(const char* name, mscaps_variant* out);

/* Scenes */
MSCAPS_API void mscaps_synth_defaults(mscaps_synth_params* params);
MSCAPS_API mscaps_status mscaps_scene_synth(const mscaps_synth_params* params, mscaps_scene** out);
/* gt_path may be NULL. */
MSCAPS_API mscaps_status mscaps_scene_load(const char* t1_path, const char* t2_path, const char* gt_path,
                                           mscaps_scene** out);
/* Writes t1.pgm, t2.pgm and gt.pgm (if present) into dir. */
MSCAPS_API mscaps_status mscaps_scene_save(const mscaps_scene* scene, const char* dir);
MSCAPS_API mscaps_status mscaps_scene_size(const mscaps_scene* scene, size_t* height, size_t* width);
MSCAPS_API void mscaps_scene_free(mscaps_scene* scene);

/* Training and models */
MSCAPS_API void mscaps_train_defaults(mscaps_train_options* options);
MSCAPS_API mscaps_status mscaps_train(const mscaps_scene* scene, const mscaps_train_options* options,
                                      mscaps_epoch_fn on_epoch, void* user, mscaps_model** out);
/* CSV with header epoch,loss,train_acc. */
MSCAPS_API mscaps_status mscaps_model_write_trace(const mscaps_model* model, const char* path);
MSCAPS_API mscaps_status mscaps_model_save(const mscaps_model* model, const char* path);
MSCAPS_API mscaps_status mscaps_model_load(const char* path, mscaps_model** out);
MSCAPS_API mscaps_status mscaps_model_patch_size(const mscaps_model* model, uint32_t* patch);
MSCAPS_API void mscaps_model_free(mscaps_model* model);

/* Change maps */
MSCAPS_API mscaps_status mscaps_predict(const mscaps_model* model, const mscaps_scene* scene, uint32_t threads,
                                        mscaps_map** out);
/* PGM with values {0, 255}. */
MSCAPS_API mscaps_status mscaps_map_save(const mscaps_map* map, const char* path);
MSCAPS_API mscaps_status mscaps_map_load(const char* path, mscaps_map** out);
MSCAPS_API mscaps_status mscaps_map_size(const mscaps_map* map, size_t* height, size_t* width);
/* Copies height*width labels (0 or 1) into dst. */
MSCAPS_API mscaps_status mscaps_map_copy(const mscaps_map* map, uint8_t* dst, size_t capacity);
MSCAPS_API void mscaps_map_free(mscaps_map* map);

/* Metrics */
MSCAPS_API mscaps_status mscaps_evaluate(const mscaps_map* pred, const mscaps_map* gt, mscaps_metrics* out);
/* Key=value text to path and JSON to path + ".json". */
MSCAPS_API mscaps_status mscaps_metrics_write(const mscaps_metrics* metrics, const char* path);
/* Key=value text; returns the number of bytes needed including the NUL. */
MSCAPS_API size_t mscaps_metrics_format(const mscaps_metrics* metrics, char* dst, size_t capacity);

/* Experiments */
MSCAPS_API mscaps_status mscaps_ablate(const mscaps_scene* scene, const mscaps_train_options* base,
                                       const uint64_t* seeds, size_t seed_count, const char* csv_path,
                                       mscaps_line_fn on_line, void* user);
MSCAPS_API mscaps_status mscaps_patch_study(const mscaps_scene* scene, const mscaps_train_options* base,
                                            const uint32_t* patches, size_t patch_count, const uint64_t* seeds,
                                            size_t seed_count, const char* csv_path, mscaps_line_fn on_line,
                                            void* user);
/* Runs the finite-difference suite; MSCAPS_ERR_CHECK_FAILED if any check
 * exceeds its tolerance. The composite network check uses 10x tolerance. */
MSCAPS_API mscaps_status mscaps_gradcheck(uint64_t seed, double tolerance, mscaps_line_fn on_line, void* user);

#ifdef __cplusplus
}
#endif

#endif /* MSCAPS_H */
