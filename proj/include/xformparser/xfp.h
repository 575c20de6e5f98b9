#ifndef XFORMPARSER_XFP_H_
#define XFORMPARSER_XFP_H_

/* C API of the form parsing library. All functions return an error code and
 * report details through an optional errmsg out-parameter; strings returned
 * through out-parameters are heap-allocated and must be released with
 * xfp_free(). Handles are opaque and freed with their *_free function. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

enum {
  XFP_OK = 0,
  XFP_ERR_USAGE = 1,       /* bad argument or flag value */
  XFP_ERR_IO = 2,          /* file system failure */
  XFP_ERR_PARSE = 3,       /* malformed input bytes */
  XFP_ERR_SCHEMA = 4,      /* input violates the dataset schema */
  XFP_ERR_REFERENTIAL = 5, /* dangling ids in input data */
  XFP_ERR_VALIDATION = 6,  /* document invariants violated */
  XFP_ERR_CONTRACT = 7,    /* API precondition broken */
  XFP_ERR_FORMAT = 8,      /* binary file format (checkpoints, states) */
  XFP_ERR_DIVERGED = 9,    /* training produced non-finite losses */
  XFP_ERR_INTERNAL = 10
};

typedef struct xfp_dataset_t xfp_dataset_t;
typedef struct xfp_train_config_t xfp_train_config_t;
typedef struct xfp_model_t xfp_model_t;

const char* xfp_version(void);
void xfp_free(void* ptr);

/* ---- datasets ---- */

int xfp_dataset_parse(const char* json, size_t len, xfp_dataset_t** out, char** errmsg);
int xfp_dataset_open(const char* path, xfp_dataset_t** out, char** errmsg);
int xfp_dataset_serialize(const xfp_dataset_t* ds, char** json_out, size_t* len_out, char** errmsg);
int xfp_dataset_write(const xfp_dataset_t* ds, const char* path, char** errmsg);
size_t xfp_dataset_doc_count(const xfp_dataset_t* ds);

/* violations_json receives a JSON array (possibly empty); *count the number
 * of violations across all documents. */
int xfp_dataset_validate(const xfp_dataset_t* ds, char** violations_json, size_t* count,
                         char** errmsg);

/* per-label entity counts and the relation multiplicity histogram */
int xfp_dataset_stats(const xfp_dataset_t* ds, char** stats_json, char** errmsg);

void xfp_dataset_free(xfp_dataset_t* ds);

/* ---- synthetic generation ---- */

int xfp_generate(uint64_t seed, int64_t num_docs, double one_to_many_frac, const char* label_set,
                 const char* split, xfp_dataset_t** out, char** errmsg);

/* ---- training configuration (key=value, mirrors the config file) ---- */

xfp_train_config_t* xfp_train_config_create(void);
int xfp_train_config_set(xfp_train_config_t* cfg, const char* key, const char* value,
                         char** errmsg);
int xfp_train_config_get(const xfp_train_config_t* cfg, const char* key, char** value_out,
                         char** errmsg);
void xfp_train_config_free(xfp_train_config_t* cfg);

/* ---- training ---- */

/* val may be NULL (validation then runs on the training data). Writes the
 * best checkpoint to checkpoint_out and line-delimited JSON epoch records to
 * log_out (pass NULL to skip the log file). */
int xfp_train(const xfp_dataset_t* train, const xfp_dataset_t* val, const xfp_train_config_t* cfg,
              const char* checkpoint_out, const char* log_out, char** errmsg);

/* ---- models ---- */

int xfp_model_open(const char* checkpoint_path, xfp_model_t** out, char** errmsg);
int xfp_model_manifest(const xfp_model_t* model, char** json_out, char** errmsg);
void xfp_model_free(xfp_model_t* model);

/* ---- inference ---- */

int xfp_evaluate(const xfp_model_t* model, const xfp_dataset_t* ds, double re_threshold,
                 int use_gold_candidates, char** report_json, char** errmsg);
int xfp_predict(const xfp_model_t* model, const xfp_dataset_t* ds, double re_threshold,
                char** predictions_json, char** errmsg);

/* ---- visualization ---- */

/* format is "svg" or "dot"; doc_id selects the document (NULL: first). */
int xfp_render(const xfp_dataset_t* ds, const char* predictions_json, const char* format,
               const char* doc_id, char** out_doc, char** errmsg);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* XFORMPARSER_XFP_H_ */
