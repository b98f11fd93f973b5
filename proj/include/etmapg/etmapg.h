#ifndef ETMAPG_H
#define ETMAPG_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define ETM_API __declspec(dllexport)
#else
#define ETM_API __attribute__((visibility("default")))
#endif

typedef enum etm_status {
  ETM_OK = 0,
  ETM_ERR_NULL_ARGUMENT = 1,
  ETM_ERR_CONFIG = 2,
  ETM_ERR_CONTRACT = 3,
  ETM_ERR_NUMERIC = 4,
  ETM_ERR_IO = 5,
  ETM_ERR_BUFFER_TOO_SMALL = 6,
  ETM_ERR_INTERNAL = 7
} etm_status;

typedef struct etm_experiment etm_experiment;

typedef struct etm_eval_summary {
  unsigned long episodes;
  long episode_length;
  double mean_return;
  double mean_step_reward;
  double trigger_rate;
  double trigger_reduction;
  long inter_event_min;
  double inter_event_mean;
  long inter_event_max;
  /* Integrator only; has_state_metrics is 0 elsewhere. */
  int has_state_metrics;
  double final_abs_state;
  double lyapunov_final;
} etm_eval_summary;

ETM_API const char* etm_version(void);
ETM_API const char* etm_status_name(etm_status status);
/* Message of the last failed call on this thread ("" if none). */
ETM_API const char* etm_last_error(void);

ETM_API etm_status etm_experiment_from_file(const char* path, etm_experiment** out);
ETM_API etm_status etm_experiment_from_json(const char* json_text, etm_experiment** out);
/* Defaults for every field. */
ETM_API etm_status etm_experiment_create(etm_experiment** out);
ETM_API void etm_experiment_destroy(etm_experiment* experiment);

/* key: env, algo, variant, seeds, steps, psi, out */
ETM_API etm_status etm_experiment_set(etm_experiment* experiment, const char* key, const char* value);
ETM_API etm_status etm_experiment_set_verbose(etm_experiment* experiment, int verbose);

/* Copies a NUL-terminated string into buf. When capacity is too small,
 * *needed (if given) receives the required size including the terminator. */
ETM_API etm_status etm_experiment_config_json(const etm_experiment* experiment, char* buf, size_t capacity,
                                              size_t* needed);
ETM_API etm_status etm_experiment_run_dir(const etm_experiment* experiment, char* buf, size_t capacity,
                                          size_t* needed);

/* Trains every seed and writes outputs under <out>/<env>_<algo>_<variant>/. */
ETM_API etm_status etm_experiment_run(etm_experiment* experiment);
/* Cross-seed aggregate of the last run, as JSON. */
ETM_API etm_status etm_experiment_aggregate_json(const etm_experiment* experiment, char* buf, size_t capacity,
                                                 size_t* needed);

/* Evaluates a checkpoint. env may be NULL to use the training environment;
 * out_dir may be NULL to skip writing CSV/JSON outputs. */
ETM_API etm_status etm_evaluate(const char* checkpoint_path, const char* env, unsigned long episodes,
                                unsigned long long seed, const char* out_dir, etm_eval_summary* out);

/* Runs every *.json config in dir with the given overrides applied. */
ETM_API etm_status etm_grid(const char* dir, const char* const* keys, const char* const* values, size_t count,
                            int verbose);

#ifdef __cplusplus
}
#endif

#endif
