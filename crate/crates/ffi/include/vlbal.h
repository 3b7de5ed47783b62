#ifndef VLBAL_H
#define VLBAL_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum {
  VLBAL_STATUS_OK = 0,
  VLBAL_STATUS_INVALID_INPUT = 1,
  VLBAL_STATUS_INVALID_PARTITION = 2,
  VLBAL_STATUS_INVALID_MODEL = 3,
  VLBAL_STATUS_INFEASIBLE = 4,
  VLBAL_STATUS_NO_FEASIBLE_CANDIDATE = 5,
  VLBAL_STATUS_TEXT_ONLY = 6,
  VLBAL_STATUS_PARSE = 7,
  VLBAL_STATUS_DUPLICATE_ID = 8,
  VLBAL_STATUS_SCHEMA_VERSION = 9,
  VLBAL_STATUS_UNKNOWN_NAME = 10,
  VLBAL_STATUS_IO = 11,
  VLBAL_STATUS_JSON = 12,
  VLBAL_STATUS_NULL_POINTER = 13,
  VLBAL_STATUS_INVALID_UTF8 = 14,
  VLBAL_STATUS_BUFFER_TOO_SMALL = 15,
  VLBAL_STATUS_PANIC = 99,
} VlbalStatus;

typedef struct VlbalDataset VlbalDataset;

typedef struct VlbalModel VlbalModel;

typedef struct VlbalPlan VlbalPlan;

/*
 Outcome of packing a dataset.
 */
typedef struct {
  uint32_t q_vision;
  uint32_t q_text;
  uint32_t iterations;
  uint64_t accepted_groups;
  uint64_t leftover_samples;
  double ave_bs;
  double pad_ratio;
  double dist_ratio_vision;
  double dist_ratio_text;
} VlbalBalanceSummary;

/*
 Pipeline and device parameters, mirroring the simulator configuration.
 A non-finite `p2p_bandwidth` means transfers cost latency only.
 */
typedef struct {
  uint32_t micro_batches;
  double p2p_bandwidth;
  double p2p_latency;
  uint64_t device_memory;
  bool overlap_comm;
  double weight_multiplier;
} VlbalSimConfig;

/*
 One simulated iteration.
 */
typedef struct {
  /*
   Seconds.
   */
  double iteration_time;
  double bubble_ratio;
  uint32_t n_stages;
} VlbalSimSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failure on this thread; empty after a success. The
 pointer stays valid until the next call into this library on the thread.
 */
const char *vlbal_last_error_message(void);

/*
 Library version, static storage.
 */
const char *vlbal_version(void);

/*
 Padding ratio of per-sample token counts.

 # Safety
 `tokens` must point to `len` readable values; `out` must be writable.
 */
VlbalStatus vlbal_pad_ratio(const uint64_t *tokens, size_t len, double *out);

/*
 Distribution ratio of per-device token counts.

 # Safety
 `loads` must point to `len` readable values; `out` must be writable.
 */
VlbalStatus vlbal_dist_ratio(const uint64_t *loads, size_t len, double *out);

/*
 Reads a JSON-lines dataset.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
VlbalStatus vlbal_dataset_load(const char *path, VlbalDataset **out);

/*
 Generates a synthetic dataset from a named preset.

 # Safety
 `preset` must be a NUL-terminated string; `out` must be writable.
 */
VlbalStatus vlbal_dataset_generate(const char *preset,
                                   size_t samples,
                                   uint64_t seed,
                                   VlbalDataset **out);

/*
 Number of samples; 0 for a null handle.

 # Safety
 `dataset` must be null or a live handle.
 */
size_t vlbal_dataset_len(const VlbalDataset *dataset);

/*
 # Safety
 `dataset` must be null or a handle not yet freed.
 */
void vlbal_dataset_free(VlbalDataset *dataset);

/*
 Packs the dataset with thresholds derived from `q_text` and reports
 balance over `dp_ranks` ranks.

 # Safety
 `dataset` must be a live handle; `out` must be writable.
 */
VlbalStatus vlbal_balance(const VlbalDataset *dataset,
                          uint32_t q_text,
                          size_t dp_ranks,
                          uint64_t seed,
                          VlbalBalanceSummary *out);

/*
 Analytic profile of a named architecture preset.

 # Safety
 `name` must be a NUL-terminated string; `out` must be writable.
 */
VlbalStatus vlbal_model_from_preset(const char *name, VlbalModel **out);

/*
 Reads a model spec document.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
VlbalStatus vlbal_model_load(const char *path, VlbalModel **out);

/*
 Layer count; 0 for a null handle.

 # Safety
 `model` must be null or a live handle.
 */
uint32_t vlbal_model_num_layers(const VlbalModel *model);

/*
 # Safety
 `model` must be null or a handle not yet freed.
 */
void vlbal_model_free(VlbalModel *model);

/*
 Cluster parameters of a named architecture preset.

 # Safety
 `name` must be a NUL-terminated string; `out` must be writable.
 */
VlbalStatus vlbal_sim_config_for_preset(const char *name, VlbalSimConfig *out);

/*
 Searches a partition into `n_stages` stages and, when `adaptive` is set,
 chooses per-layer re-computation for it; otherwise every layer is
 recomputed.

 # Safety
 `model` and `config` must be valid; `out` must be writable.
 */
VlbalStatus vlbal_plan_search(const VlbalModel *model,
                              size_t n_stages,
                              const VlbalSimConfig *config,
                              bool adaptive,
                              VlbalPlan **out);

/*
 Reads a plan document.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
VlbalStatus vlbal_plan_load(const char *path, VlbalPlan **out);

/*
 Writes a plan document.

 # Safety
 `plan` must be a live handle; `path` a NUL-terminated string.
 */
VlbalStatus vlbal_plan_save(const VlbalPlan *plan, const char *path);

/*
 Plan as a JSON string, released with [`vlbal_string_free`].

 # Safety
 `plan` must be a live handle; `out` must be writable.
 */
VlbalStatus vlbal_plan_to_json(const VlbalPlan *plan, char **out);

/*
 Stage count; 0 for a null handle.

 # Safety
 `plan` must be null or a live handle.
 */
size_t vlbal_plan_n_stages(const VlbalPlan *plan);

/*
 Layers per stage, into `buf` of capacity `len` (at least the stage count).

 # Safety
 `plan` must be a live handle; `buf` must hold `len` writable values.
 */
VlbalStatus vlbal_plan_stage_layers(const VlbalPlan *plan, uint32_t *buf, size_t len);

/*
 Layers per stage whose re-computation is cancelled.

 # Safety
 `plan` must be a live handle; `buf` must hold `len` writable values.
 */
VlbalStatus vlbal_plan_cancelled(const VlbalPlan *plan, uint32_t *buf, size_t len);

/*
 Simulates the plan under its own configuration.

 # Safety
 `plan` must be a live handle; `out` must be writable.
 */
VlbalStatus vlbal_plan_simulate(const VlbalPlan *plan, VlbalSimSummary *out);

/*
 # Safety
 `plan` must be null or a handle not yet freed.
 */
void vlbal_plan_free(VlbalPlan *plan);

/*
 # Safety
 `s` must be null or a string returned by this library and not yet freed.
 */
void vlbal_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VLBAL_H */
