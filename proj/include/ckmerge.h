/*
 * Copyright (c) 2026, the ckmerge authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C API of the ckmerge checkpoint-merging toolkit.
 *
 * All functions return a ckm_status; on failure ckm_last_error() holds a
 * human-readable message for the calling thread, valid until the next ckm_*
 * call on that thread. The status values double as the CLI exit codes.
 *
 * Handles (ckm_model, ckm_job) are opaque; free them with the matching
 * *_free function. Strings returned through char ** out-parameters are owned
 * by the caller and released with ckm_string_free().
 *
 * Thread count arguments select per-tensor parallelism; pass 0 to use
 * CKMERGE_THREADS or, failing that, the hardware concurrency. Results are
 * byte-identical regardless of the thread count.
 */

#ifndef CKMERGE_H
#define CKMERGE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(CKM_BUILD)
#    define CKM_API __declspec(dllexport)
#  else
#    define CKM_API __declspec(dllimport)
#  endif
#else
#  define CKM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ckm_status {
    CKM_OK             = 0,
    CKM_ERR_VALIDATION = 1,
    CKM_ERR_IO         = 2,
    CKM_ERR_COMPUTE    = 3
} ckm_status;

CKM_API const char * ckm_version(void);

/* Message for the most recent failing call on this thread ("" if none). */
CKM_API const char * ckm_last_error(void);

CKM_API void ckm_string_free(char * s);

/* ---- checkpoints ------------------------------------------------------ */

typedef struct ckm_model ckm_model;

/* path: a .safetensors file, a sharded index json, or a directory holding
 * either. The tensors are loaded (widened to FP32) on open. */
CKM_API ckm_status ckm_model_open(const char * path, int n_threads, ckm_model ** out_model);
CKM_API void       ckm_model_free(ckm_model * model);

CKM_API size_t       ckm_model_tensor_count(const ckm_model * model);
/* NULL when index is out of range; names come back in lexicographic order. */
CKM_API const char * ckm_model_tensor_name(const ckm_model * model, size_t index);

/* Canonical rewrite. shard_limit_bytes 0 means a single file. */
CKM_API ckm_status ckm_model_save(const ckm_model * model, const char * path,
                                  uint64_t shard_limit_bytes, int n_threads);

/* Mean over tensors of ||A-B||_F / (||A||_F + ||B||_F + 1e-12). */
CKM_API ckm_status ckm_weight_similarity(const ckm_model * a, const ckm_model * b,
                                         double * out_sigma);

/* ---- merge jobs -------------------------------------------------------- */

typedef struct ckm_job ckm_job;

/* Parses and validates a JSON merge recipe. Relative paths inside the recipe
 * resolve against the recipe file's directory. */
CKM_API ckm_status ckm_job_open(const char * recipe_path, ckm_job ** out_job);
CKM_API void       ckm_job_free(ckm_job * job);

/* Overrides the recipe's output path. */
CKM_API ckm_status ckm_job_set_output(ckm_job * job, const char * output_path);

CKM_API const char * ckm_job_method(const ckm_job * job);
CKM_API const char * ckm_job_output(const ckm_job * job);

/* Runs the merge and writes the checkpoint (temporary files + atomic rename;
 * no partial checkpoint is left behind on error). */
CKM_API ckm_status ckm_job_run(ckm_job * job, int n_threads);

/* Printable summary block (method, coefficients, tensor counts, output);
 * NULL until the job has run. */
CKM_API const char * ckm_job_summary(const ckm_job * job);

/* ---- metrics ----------------------------------------------------------- */

/* Evaluates one response log (JSONL) and returns the metrics report as CSV.
 * k <= 0 uses the log's rollout count; gold_path may be NULL (Vote@k is then
 * omitted). */
CKM_API ckm_status ckm_metrics_csv(const char * log_path, int k, const char * gold_path,
                                   char ** out_csv);

/* ---- sweeps ------------------------------------------------------------ */

/* Merges one checkpoint per lambda under <out_dir>/MI-<lambda>, then joins
 * response logs (logs_dir may be NULL) into sweep.csv plus a stages.json
 * sidecar. out_dir NULL uses the recipe's output path. eps_low/eps_high are
 * the stage thresholds on the think ratio. */
CKM_API ckm_status ckm_sweep_run(const char * recipe_path, const double * lambdas,
                                 size_t n_lambdas, const char * logs_dir, const char * out_dir,
                                 int k, double eps_low, double eps_high, int n_threads,
                                 char ** out_summary);

/* Metrics/stages only, from an existing logs directory whose MI-<lambda>
 * subdirectories name the sweep points. */
CKM_API ckm_status ckm_report_run(const char * logs_dir, const char * out_dir, int k,
                                  double eps_low, double eps_high, char ** out_summary);

#ifdef __cplusplus
}
#endif

#endif /* CKMERGE_H */
