#ifndef SHADEADAPT_C_API_H
#define SHADEADAPT_C_API_H

#include <stddef.h>
#include <stdint.h>

#if defined(SHADEADAPT_BUILDING)
#define SA_API __attribute__((visibility("default")))
#else
#define SA_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sa_status {
  SA_OK = 0,
  SA_ERR_CONFIG = 1,
  SA_ERR_REQUEST = 2,
  SA_ERR_NUMERIC = 3,
  SA_ERR_INGEST = 4,
  SA_ERR_LOAD = 5,
  SA_ERR_IO = 6,
  SA_ERR_INTERNAL = 7
} sa_status;

typedef struct sa_config sa_config;
typedef struct sa_model sa_model;

typedef struct sa_point {
  int64_t x;
  int64_t y;
  int32_t label;
  float score;
} sa_point;

/* "ok", "config", "request", ... */
SA_API const char* sa_status_name(sa_status status);
/* Message of the last failure on this thread; empty after a success. */
SA_API const char* sa_last_error(void);
/* Strings returned through char** out-parameters are freed with this. */
SA_API void sa_string_free(char* s);

/* Configuration. require_dataset = 0 allows configs without name/root. */
SA_API sa_status sa_config_load(const char* path, int require_dataset, sa_config** out);
SA_API sa_status sa_config_parse(const char* text, int require_dataset, sa_config** out);
SA_API sa_status sa_config_set(sa_config* cfg, const char* key, const char* value);
SA_API sa_status sa_config_to_text(const sa_config* cfg, char** out);
SA_API void sa_config_free(sa_config* cfg);

/* Writes a synthetic image/mask dataset into root/images and root/masks. */
SA_API sa_status sa_synthesize(const char* root, int64_t count, int64_t size, uint64_t seed);

/* Trains per the config; summary JSON (checkpoints, steps, epochs). */
SA_API sa_status sa_train(const sa_config* cfg, char** summary_json);

/* cfg may be NULL to use the config stored in the checkpoint. */
SA_API sa_status sa_model_load(const char* checkpoint, const sa_config* cfg, sa_model** out);
/* Fresh model from a config, without trained weights. */
SA_API sa_status sa_model_create(const sa_config* cfg, sa_model** out);
SA_API void sa_model_free(sa_model* model);

/* Writes <stem>_mask.png (and coarse/prompts when present) into out_dir. */
SA_API sa_status sa_infer_file(sa_model* model, const char* image_path, const char* out_dir,
                               char** result_json);
/* Evaluates on the config's dataset; writes eval.csv / eval.json into
   out_dir when it is not NULL. table (optional) receives a text table. */
SA_API sa_status sa_evaluate(sa_model* model, const sa_config* dataset_cfg, const char* out_dir,
                             char** result_json, char** table);

/* Prompt points for an image. With a model the coarse mask comes from its
   prompt generator; without one the image is read as a grey coarse mask.
   Writes points.json, coarse.png and overlay.png into out_dir. */
SA_API sa_status sa_sample_points_file(sa_model* model, const sa_config* cfg,
                                       const char* image_path, const char* out_dir,
                                       char** points_json);

/* matrix: a built-in name (components, grid, topk) or a file path. */
SA_API sa_status sa_ablate(const sa_config* cfg, const char* matrix, const char* out_dir,
                           char** result_json, char** table);

/* Parameter census of the configured model (or of a loaded model). */
SA_API sa_status sa_census(const sa_config* cfg, sa_model* model, char** table, char** csv,
                           int64_t* trainable, int64_t* total);

/* Direct access to the numeric kernels. */
SA_API sa_status sa_grid_sample(const float* probs, int64_t height, int64_t width, int64_t g,
                                int64_t k, double tau, sa_point* out, size_t capacity,
                                size_t* count);
SA_API sa_status sa_topk_sample(const float* probs, int64_t height, int64_t width, int64_t n_pos,
                                int64_t n_neg, sa_point* out, size_t capacity, size_t* count);
SA_API sa_status sa_ber(const uint8_t* pred, const uint8_t* gt, size_t n, double* ber);
SA_API sa_status sa_focal_loss(const float* pred, const float* target, size_t n, double alpha,
                               double gamma, double* loss);

#ifdef __cplusplus
}
#endif

#endif
