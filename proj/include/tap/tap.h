#ifndef TAP_TAP_H
#define TAP_TAP_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define TAP_API __declspec(dllexport)
#else
#define TAP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as process exit codes for the command-line tool. */
typedef enum tap_status {
  TAP_OK = 0,
  TAP_ERR_INTERNAL = 1,
  TAP_ERR_CONFIG = 2,
  TAP_ERR_DATA = 3,
  TAP_ERR_NUMERIC = 4
} tap_status;

typedef struct tap_dataset tap_dataset;
typedef struct tap_model tap_model;

typedef struct tap_dataset_info {
  char world[16];
  size_t episodes;
  size_t frames;
  size_t height, width, channels;
  uint64_t seed;
} tap_dataset_info;

typedef struct tap_model_info {
  size_t context_count;
  size_t target_count;
  size_t latent_dim; /* 0 without a VAE */
  size_t height, width, channels;
  int use_new_pixels;
} tap_model_info;

TAP_API const char* tap_version(void);

/* Message of the last failed call on this thread; "" after a success. */
TAP_API const char* tap_last_error(void);

/* Frees strings returned through char** out-parameters. */
TAP_API void tap_string_free(char* s);

/* Runs a subcommand (gen, train, eval, bottleneck, plan, recursive, dump-frames) with a JSON
 * object of arguments. On success *summary_json (if non-NULL) receives a JSON summary. */
TAP_API tap_status tap_run(const char* command, const char* args_json, char** summary_json);

/* Receives one line per training epoch or recursion episode; NULL disables. Process-wide. */
typedef void (*tap_progress_fn)(const char* line, void* user);
TAP_API void tap_set_progress(tap_progress_fn fn, void* user);

/* Parses a run configuration (with optional overrides, either may be NULL) and returns the
 * fully resolved configuration as JSON. */
TAP_API tap_status tap_config_resolve(const char* config_json, const char* overrides_json, char** resolved_json);

TAP_API tap_status tap_dataset_generate(const char* world, uint64_t seed, size_t episodes, size_t objects,
                                        tap_dataset** out);
TAP_API tap_status tap_dataset_read(const char* path, tap_dataset** out);
TAP_API tap_status tap_dataset_write(const tap_dataset* dataset, const char* path);
TAP_API tap_status tap_dataset_get_info(const tap_dataset* dataset, tap_dataset_info* info);
/* Copies frame t of an episode as C*H*W doubles in [-1, 1]. */
TAP_API tap_status tap_dataset_frame(const tap_dataset* dataset, size_t episode, size_t t, double* out, size_t len);
TAP_API void tap_dataset_free(tap_dataset* dataset);

TAP_API tap_status tap_model_load(const char* checkpoint_path, tap_model** out);
TAP_API tap_status tap_model_get_info(const tap_model* model, tap_model_info* info);
/* contexts: n * context_count frames laid out [n][context][C][H][W]; z: n * latent_dim values
 * (required iff latent_dim > 0); out: n * C * H * W composited predictions. */
TAP_API tap_status tap_model_predict(const tap_model* model, size_t n, const double* contexts, const double* z,
                                     double* out);
TAP_API void tap_model_free(tap_model* model);

#ifdef __cplusplus
}
#endif

#endif
