/* C interface of abacus-sim: run accelerator simulations and read back metrics. */

#ifndef ABACUS_SIM_H
#define ABACUS_SIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by fallible calls.
 */
typedef enum AbacusStatus {
  AbacusStatus_Ok = 0,
  AbacusStatus_InvalidArgument = 1,
  AbacusStatus_ParseError = 2,
  AbacusStatus_RunError = 3,
  AbacusStatus_IoError = 4,
} AbacusStatus;

/**
 * Opaque hardware/model parameter set.
 */
typedef struct AbacusParams AbacusParams;

/**
 * Opaque finished-run handle.
 */
typedef struct AbacusReport AbacusReport;

/**
 * Opaque workload handle.
 */
typedef struct AbacusWorkload AbacusWorkload;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *abacus_last_error(void);

/**
 * Creates the default parameter set. Free with `abacus_params_free`.
 */
struct AbacusParams *abacus_params_new(void);

/**
 * Applies one `key=value`-style override (same keys as the CLI `--set`).
 *
 * # Safety
 * `params` must come from `abacus_params_new` and not be freed; `key` and
 * `value` must be valid NUL-terminated strings.
 */
enum AbacusStatus abacus_params_set(struct AbacusParams *params,
                                    const char *key,
                                    const char *value);

/**
 * # Safety
 * `params` must come from `abacus_params_new`; it is freed exactly once.
 */
void abacus_params_free(struct AbacusParams *params);

/**
 * Loads a named preset workload (e.g. "atax", "syrk", "demo-intra").
 * Returns null on error; see `abacus_last_error`.
 *
 * # Safety
 * `name` must be a valid NUL-terminated string.
 */
struct AbacusWorkload *abacus_workload_preset(const char *name);

/**
 * Builds heterogeneous mix 1..=14 with the given instances per kernel.
 */
struct AbacusWorkload *abacus_workload_mix(uint32_t mix_id, uint32_t instances_per_kernel);

/**
 * Parses a workload document (the same grammar as `--spec` files).
 *
 * # Safety
 * `text` must be a valid NUL-terminated string; `params` as for
 * `abacus_params_set` (null means defaults).
 */
struct AbacusWorkload *abacus_workload_parse(const char *text, const struct AbacusParams *params);

/**
 * # Safety
 * `workload` must come from one of the constructors; freed exactly once.
 */
void abacus_workload_free(struct AbacusWorkload *workload);

/**
 * Runs one workload under a policy ("interst" | "interdy" | "intraio" |
 * "intrao3" | "simd") and datapath mode ("flashabacus" | "baseline").
 * Returns null on error; see `abacus_last_error`.
 *
 * # Safety
 * `workload` from a constructor; `policy`/`mode` valid strings; `params`
 * from `abacus_params_new` or null for defaults.
 */
struct AbacusReport *abacus_run(const struct AbacusWorkload *workload,
                                const char *policy,
                                const char *mode,
                                const struct AbacusParams *params);

/**
 * # Safety
 * `report` must come from `abacus_run`; freed exactly once.
 */
void abacus_report_free(struct AbacusReport *report);

/**
 * Simulated time from first offload arrival to last kernel completion, in
 * seconds. NaN for a null report.
 *
 * # Safety
 * `report` must come from `abacus_run` and not be freed.
 */
double abacus_report_makespan_secs(const struct AbacusReport *report);

/**
 * Processed input bytes per second of makespan.
 *
 * # Safety
 * `report` must come from `abacus_run` and not be freed.
 */
double abacus_report_throughput_bytes_per_sec(const struct AbacusReport *report);

/**
 * Total energy of the run in joules (data movement + computation + storage
 * access).
 *
 * # Safety
 * `report` must come from `abacus_run` and not be freed.
 */
double abacus_report_energy_total_joules(const struct AbacusReport *report);

/**
 * Mean worker utilization over the makespan, in [0, 1].
 *
 * # Safety
 * `report` must come from `abacus_run` and not be freed.
 */
double abacus_report_mean_worker_utilization(const struct AbacusReport *report);

/**
 * Number of kernel instances in the finished run.
 *
 * # Safety
 * `report` must come from `abacus_run` and not be freed.
 */
uintptr_t abacus_report_kernel_count(const struct AbacusReport *report);

/**
 * Latency of one kernel instance in seconds, or NaN if out of range.
 *
 * # Safety
 * `report` must come from `abacus_run` and not be freed.
 */
double abacus_report_kernel_latency_secs(const struct AbacusReport *report, uintptr_t index);

/**
 * Serializes the full report document (TOML). Free with
 * `abacus_string_free`.
 *
 * # Safety
 * `report` must come from `abacus_run` and not be freed.
 */
char *abacus_report_toml(const struct AbacusReport *report);

/**
 * Writes `<base>.report`, `<base>.events.csv` and `<base>.dispatch.csv`
 * into `dir`.
 *
 * # Safety
 * `report` from `abacus_run`; `dir` and `base` valid strings.
 */
enum AbacusStatus abacus_report_write_artifacts(const struct AbacusReport *report,
                                                const char *dir,
                                                const char *base);

/**
 * Frees a string returned by this library.
 *
 * # Safety
 * `s` must come from an `abacus_*` call that documents this deallocator.
 */
void abacus_string_free(char *s);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* ABACUS_SIM_H */
