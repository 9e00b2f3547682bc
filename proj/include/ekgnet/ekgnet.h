/*
 * ekgnet C API: ECG beat extraction, tiny-CNN training under an analog noise
 * model, 6-bit weight quantization with fine-tuning, and a behavioral
 * simulator of the analog MAC datapath.
 *
 * All functions return EKG_OK or an error code; ekg_last_error() gives a
 * thread-local message for the most recent failure. Strings returned through
 * char** are heap-allocated and must be released with ekg_string_free().
 */
#ifndef EKGNET_H
#define EKGNET_H

#include <stdint.h>

#ifndef EKGNET_API
#if defined(_WIN32)
#define EKGNET_API
#else
#define EKGNET_API __attribute__((visibility("default")))
#endif
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef int32_t ekg_status;

enum {
  EKG_OK = 0,
  EKG_EINVAL = 1,  /* bad argument or config */
  EKG_EIO = 2,     /* file system failure */
  EKG_EPARSE = 3,  /* malformed input file */
  EKG_EFORMAT = 4, /* unsupported storage format */
  EKG_ESTATE = 5,  /* inconsistent internal state */
  EKG_EFAIL = 6    /* stage failure */
};

typedef struct ekg_record ekg_record;
typedef struct ekg_beatset ekg_beatset;
typedef struct ekg_model ekg_model;
typedef struct ekg_qmodel ekg_qmodel;

EKGNET_API const char* ekg_version(void);
EKGNET_API const char* ekg_last_error(void);
EKGNET_API void ekg_string_free(char* s);

/* ---- WFDB records ------------------------------------------------------ */

/* Opens RECORD.hea/.dat(/.atr) under the given path prefix. strict != 0
 * turns checksum mismatches and missing annotations into errors. */
EKGNET_API ekg_status ekg_record_open(const char* path_prefix, int strict, ekg_record** out);
EKGNET_API void ekg_record_free(ekg_record* record);

EKGNET_API ekg_status ekg_record_num_signals(const ekg_record* record, int32_t* out);
EKGNET_API ekg_status ekg_record_sampling_rate(const ekg_record* record, double* out);
EKGNET_API ekg_status ekg_record_num_samples(const ekg_record* record, int64_t* out);
EKGNET_API ekg_status ekg_record_num_annotations(const ekg_record* record, int64_t* out);

/* Copies up to capacity millivolt samples of one channel into buffer. */
EKGNET_API ekg_status ekg_record_signal(const ekg_record* record, int32_t channel, double* buffer,
                                        int64_t capacity, int64_t* written);
EKGNET_API ekg_status ekg_record_annotation(const ekg_record* record, int64_t index, int64_t* sample,
                                            char* symbol);
EKGNET_API ekg_status ekg_record_summary_json(const ekg_record* record, char** json_out);

/* AAMI class index (0=N 1=S 2=V 3=Q) for a beat symbol; -1 for non-beat codes. */
EKGNET_API int32_t ekg_aami_class(char symbol);

/* ---- beat sets ----------------------------------------------------------- */

/* task is "mitbih" (4 classes) or "ptb" (2 classes). params_json may be NULL;
 * keys: fs_target, window_len, peak_threshold, beat_factor, label_window_s,
 * channel. fixed_label >= 0 labels every beat (PTB); -1 uses annotations. */
EKGNET_API ekg_status ekg_beatset_extract(const ekg_record* record, const char* task,
                                          const char* params_json, int32_t fixed_label,
                                          ekg_beatset** out);
EKGNET_API ekg_status ekg_beatset_load_csv(const char* path, const char* task, ekg_beatset** out);
EKGNET_API ekg_status ekg_beatset_save_csv(const ekg_beatset* set, const char* path);
EKGNET_API ekg_status ekg_beatset_merge(ekg_beatset* dst, const ekg_beatset* src);
EKGNET_API int64_t ekg_beatset_size(const ekg_beatset* set);
EKGNET_API ekg_status ekg_beatset_beat(const ekg_beatset* set, int64_t index, double* samples178,
                                       int32_t* label);
EKGNET_API void ekg_beatset_free(ekg_beatset* set);

/* ---- model checkpoints --------------------------------------------------- */

EKGNET_API ekg_status ekg_model_load(const char* path, ekg_model** out);
EKGNET_API ekg_status ekg_model_save(const ekg_model* model, const char* path);
EKGNET_API ekg_status ekg_model_num_params(const ekg_model* model, int64_t* out);
EKGNET_API ekg_status ekg_model_num_classes(const ekg_model* model, int32_t* out);
/* logits may be NULL; otherwise it receives num_classes values. */
EKGNET_API ekg_status ekg_model_predict(const ekg_model* model, const double* beat178, int32_t* label,
                                        double* logits);
EKGNET_API void ekg_model_free(ekg_model* model);

EKGNET_API ekg_status ekg_qmodel_load(const char* path, ekg_qmodel** out);
EKGNET_API ekg_status ekg_qmodel_save(const ekg_qmodel* qmodel, const char* path);
EKGNET_API ekg_status ekg_qmodel_predict(const ekg_qmodel* qmodel, const double* beat178, int32_t* label);
EKGNET_API void ekg_qmodel_free(ekg_qmodel* qmodel);

/* 6-bit (or bits) uniform quantization of a float checkpoint. */
EKGNET_API ekg_status ekg_quantize_model(const ekg_model* model, int32_t bits, ekg_qmodel** out);

/* ---- pipeline stages ------------------------------------------------------ */

/* Config document shared by the stages below and by ekg_run_experiment; see
 * the project README for the schema. Every stage writes its artifacts under
 * the config's out_dir and returns a JSON summary. */

/* ingest/extract/split/train/evaluate-float. */
EKGNET_API ekg_status ekg_train_stage(const char* config_json, char** summary_json);

/* Single-weight stochastic fine-tuning against a validation beat set. */
EKGNET_API ekg_status ekg_finetune_qmodel(ekg_qmodel* qmodel, const ekg_beatset* validation,
                                          int32_t iterations, uint64_t seed, char** log_csv);

/* Monte Carlo analog evaluation; mac_json may be NULL for defaults. */
EKGNET_API ekg_status ekg_simulate(const ekg_qmodel* qmodel, const ekg_beatset* beats,
                                   const char* mac_json, int32_t num_seeds, uint64_t seed,
                                   char** report_json);

/* MAC linearity characterization; mac_json may be NULL for defaults. */
EKGNET_API ekg_status ekg_characterize_mac(const char* mac_json, int64_t trials, uint64_t seed,
                                           char** report_json);

EKGNET_API ekg_status ekg_evaluate_model(const ekg_model* model, const ekg_beatset* beats,
                                         char** metrics_json);
EKGNET_API ekg_status ekg_evaluate_qmodel(const ekg_qmodel* qmodel, const ekg_beatset* beats,
                                          char** metrics_json);

/* Full pipeline: ingest -> extract -> split -> train -> quantize -> finetune
 * -> float/quantized/analog evaluation, with all artifacts under out_dir. */
EKGNET_API ekg_status ekg_run_experiment(const char* config_json, char** summary_json);

#ifdef __cplusplus
}
#endif

#endif /* EKGNET_H */
