/*
 * ckav: checkpoint averaging engine, C interface.
 *
 * Objects are opaque handles created by *_read / *_create / computation
 * functions and released with the matching *_free. Every function returning
 * ckav_status leaves a human-readable message retrievable with
 * ckav_last_error() on failure (per thread). Strings returned through char**
 * out-parameters are owned by the caller and released with ckav_string_free.
 *
 * Handles are immutable once created except through *_set_* functions; a
 * handle may be read from several threads at once.
 */
#ifndef CKAV_H
#define CKAV_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(CKAV_BUILDING_LIBRARY)
#    define CKAV_API __declspec(dllexport)
#  else
#    define CKAV_API __declspec(dllimport)
#  endif
#else
#  define CKAV_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ckav_status {
    CKAV_OK = 0,
    CKAV_ERROR_USAGE = 1,    /* invalid API use: null handle, unknown enum value */
    CKAV_ERROR_INVALID = 2,  /* data or validation failure */
    CKAV_ERROR_IO = 3,       /* filesystem failure */
    CKAV_ERROR_INTERNAL = 4
} ckav_status;

typedef enum ckav_selection {
    CKAV_SELECT_TOP_K = 0,
    CKAV_SELECT_LAST_K_BEST = 1,
    CKAV_SELECT_LAST_K_END = 2
} ckav_selection;

typedef enum ckav_sweep_kind {
    CKAV_SWEEP_K = 0,
    CKAV_SWEEP_TEMP = 1,
    CKAV_SWEEP_GRAD_ETA = 2,
    CKAV_SWEEP_OPT_ETA = 3,
    CKAV_SWEEP_SIMPLEX = 4
} ckav_sweep_kind;

typedef enum ckav_format {
    CKAV_FORMAT_CSV = 0,
    CKAV_FORMAT_JSON = 1
} ckav_format;

typedef struct ckav_checkpoint ckav_checkpoint;
typedef struct ckav_dataset ckav_dataset;
/* Dev objective: the toy MLP on a dataset, or the quadratic bowl. */
typedef struct ckav_objective ckav_objective;

CKAV_API const char* ckav_version(void);
CKAV_API const char* ckav_last_error(void);
CKAV_API void ckav_string_free(char* s);

/* ---- checkpoints ---- */

CKAV_API ckav_status ckav_checkpoint_read(const char* path, int allow_nonfinite, ckav_checkpoint** out);
CKAV_API ckav_status ckav_checkpoint_write(const ckav_checkpoint* ckpt, const char* path);
CKAV_API void ckav_checkpoint_free(ckav_checkpoint* ckpt);

/* JSON: {"meta": {...}, "has_grads": bool, "tensors": [{"name", "shape"}...]} */
CKAV_API ckav_status ckav_checkpoint_describe(const ckav_checkpoint* ckpt, char** out_json);
CKAV_API ckav_status ckav_checkpoint_step(const ckav_checkpoint* ckpt, uint64_t* out_step);
/* *out_present is set to 0 when the checkpoint has no dev perplexity. */
CKAV_API ckav_status ckav_checkpoint_dev_ppl(const ckav_checkpoint* ckpt, double* out_ppl, int* out_present);
CKAV_API ckav_status ckav_checkpoint_set_tag(ckav_checkpoint* ckpt, const char* tag);
CKAV_API ckav_status ckav_checkpoint_set_dev_ppl(ckav_checkpoint* ckpt, double ppl);
/* Nonzero *out_equal when params, grads and metadata are bit-identical. */
CKAV_API ckav_status ckav_checkpoint_equal(const ckav_checkpoint* a, const ckav_checkpoint* b, int* out_equal);

CKAV_API ckav_status ckav_validate_compat(const ckav_checkpoint* const* ckpts, size_t n);

/* ---- weights ---- (out arrays hold k doubles) */

CKAV_API ckav_status ckav_weights_uniform(size_t k, double* out);
CKAV_API ckav_status ckav_weights_ppl_softmax(const double* ppls, size_t k, double tau, double* out);
/* Validates sum within 1e-9, then renormalizes. */
CKAV_API ckav_status ckav_weights_explicit(const double* weights, size_t k, double* out);

/* ---- selection ---- */

/* `series` ordered by step; out_indices must hold min(k, n) entries. */
CKAV_API ckav_status ckav_select(const ckav_checkpoint* const* series, size_t n, ckav_selection kind, size_t k,
                                 size_t* out_indices, size_t* out_count);

/* ---- averaging ---- */

CKAV_API ckav_status ckav_average(const ckav_checkpoint* const* ckpts, size_t n, const double* weights,
                                  size_t threads, ckav_checkpoint** out);
CKAV_API ckav_status ckav_gradient_step_average(const ckav_checkpoint* const* ckpts, size_t n, const double* weights,
                                                double eta, size_t threads, ckav_checkpoint** out);

/* ---- datasets and objectives ---- */

CKAV_API ckav_status ckav_dataset_read(const char* path, ckav_dataset** out);
CKAV_API ckav_status ckav_dataset_write(const ckav_dataset* data, const char* path);
CKAV_API void ckav_dataset_free(ckav_dataset* data);

/* spec_json describing a quadratic task (has "dim" or "center") ignores `dev`;
 * otherwise it is a toy model spec and `dev` is required. */
CKAV_API ckav_status ckav_objective_create(const char* spec_json, const ckav_dataset* dev, ckav_objective** out);
CKAV_API void ckav_objective_free(ckav_objective* objective);
CKAV_API ckav_status ckav_evaluate(const ckav_objective* objective, const ckav_checkpoint* ckpt, double* out_loss,
                                   double* out_ppl);

/* ---- weight optimization ---- */

/* out_weights holds n doubles. out_report_json (optional) receives
 * {"eta", "gradient", "logits", "weights", "loss_before", "ppl_before", "loss_after", "ppl_after"}. */
CKAV_API ckav_status ckav_optimize_weights(const ckav_checkpoint* const* ckpts, size_t n,
                                           const ckav_objective* objective, double eta, double* out_weights,
                                           char** out_report_json);

/* ---- training and task generation ---- */

/* Writes train.ckav, dev.ckav and ckpt_<step>.ckav into out_dir. `seed_override`
 * replaces the Adam seed when has_seed is nonzero. out_json lists the files. */
CKAV_API ckav_status ckav_train_toy(const char* spec_json, const char* adam_json, const char* out_dir, int has_seed,
                                    uint64_t seed_override, char** out_json);
CKAV_API ckav_status ckav_gen_quadratic(const char* spec_json, const char* out_dir, int has_seed,
                                        uint64_t seed_override, char** out_json);

/* ---- sweeps ---- */

typedef struct ckav_sweep_options {
    ckav_sweep_kind kind;
    ckav_selection selection; /* k, temp, grad-eta */
    size_t k;                 /* k_max for the k sweep; selected count for temp and grad-eta */
    double tau;               /* grad-eta */
    const double* grid;       /* taus or etas; NULL selects the default grid */
    size_t grid_len;
    size_t resolution;        /* simplex */
    size_t threads;
    ckav_format format;
} ckav_sweep_options;

/* Defaults: top-k, k = 10, tau = 100, default grid, resolution 20, 1 thread, CSV. */
CKAV_API void ckav_sweep_options_init(ckav_sweep_options* options);

/* k/temp/grad-eta sort the checkpoints by step; opt-eta uses them in the
 * given order; simplex requires exactly 3. out_summary_json (optional)
 * receives {"kind", "records", "flatness"?}. */
CKAV_API ckav_status ckav_sweep(const ckav_checkpoint* const* ckpts, size_t n, const ckav_objective* objective,
                                const ckav_sweep_options* options, char** out_text, char** out_summary_json);

#ifdef __cplusplus
}
#endif

#endif /* CKAV_H */
