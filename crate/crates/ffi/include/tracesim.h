#ifndef TRACESIM_H
#define TRACESIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum TsStatus {
  TS_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  TS_STATUS_NULL_ARGUMENT = 1,
  /*
   A string argument was not valid UTF-8.
   */
  TS_STATUS_INVALID_UTF8 = 2,
  /*
   The machine description is malformed or inconsistent.
   */
  TS_STATUS_CONFIG_ERROR = 3,
  /*
   A trace could not be read or generated.
   */
  TS_STATUS_TRACE_ERROR = 4,
  /*
   Arguments do not fit together (for example, trace count vs core count).
   */
  TS_STATUS_USAGE_ERROR = 5,
  /*
   The simulation failed while running.
   */
  TS_STATUS_RUNTIME_ERROR = 6,
  /*
   The requested statistic does not exist.
   */
  TS_STATUS_NOT_FOUND = 7,
  /*
   An internal error; the handle involved should be freed.
   */
  TS_STATUS_PANIC = 8,
} TsStatus;

/*
 Machine description.
 */
typedef struct TsConfig TsConfig;

/*
 Statistics of a finished or paused simulation.
 */
typedef struct TsReport TsReport;

/*
 A simulation in progress.
 */
typedef struct TsSimulation TsSimulation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message describing the last failed call on this thread, or an empty string.
 The pointer stays valid until the next call into this library.
 */
const char *ts_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *ts_version(void);

/*
 Releases a string returned by this library.

 # Safety
 `s` must be null or a string returned by this library that was not freed yet.
 */
void ts_string_free(char *s);

/*
 Default machine with `num_cores` cores.

 # Safety
 `out` must be a valid pointer to writable storage for one handle.
 */
enum TsStatus ts_config_default(uint32_t num_cores, struct TsConfig **out);

/*
 Parses a JSON machine description; omitted fields take their defaults.

 # Safety
 `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TsStatus ts_config_from_json(const char *json, struct TsConfig **out);

/*
 Fully expanded JSON form of a configuration. Free the result with [`ts_string_free`].

 # Safety
 `config` must be a live handle and `out` a valid pointer.
 */
enum TsStatus ts_config_to_json(const struct TsConfig *config, char **out);

/*
 Number of cores in a configuration, or 0 for a null handle.

 # Safety
 `config` must be null or a live handle.
 */
uint32_t ts_config_num_cores(const struct TsConfig *config);

/*
 # Safety
 `config` must be null or a handle that was not freed yet.
 */
void ts_config_free(struct TsConfig *config);

/*
 Builds a simulation of `config` with one trace file per core, using the
 built-in modules. Traces shorter than the run are replayed from the start.
 The configuration is copied; it may be freed afterwards.

 # Safety
 `config` must be a live handle, `trace_paths` must point to `num_traces`
 NUL-terminated strings and `out` must be a valid pointer.
 */
enum TsStatus ts_simulation_new(const struct TsConfig *config,
                                const char *const *trace_paths,
                                size_t num_traces,
                                uint64_t warmup,
                                uint64_t simulate,
                                struct TsSimulation **out);

/*
 Advances to the next clock edge. `running` is set to false once the run has finished.

 # Safety
 `sim` must be a live handle and `running` a valid pointer.
 */
enum TsStatus ts_simulation_step(struct TsSimulation *sim, bool *running);

/*
 Runs to completion and returns the final report.

 # Safety
 `sim` must be a live handle and `out` a valid pointer.
 */
enum TsStatus ts_simulation_run(struct TsSimulation *sim, struct TsReport **out);

/*
 Snapshot of the counters as they stand.

 # Safety
 `sim` must be a live handle and `out` a valid pointer.
 */
enum TsStatus ts_simulation_report(const struct TsSimulation *sim, struct TsReport **out);

/*
 # Safety
 `sim` must be null or a handle that was not freed yet.
 */
void ts_simulation_free(struct TsSimulation *sim);

/*
 Report as a flat JSON object. Free the result with [`ts_string_free`].

 # Safety
 `report` must be a live handle and `out` a valid pointer.
 */
enum TsStatus ts_report_to_json(const struct TsReport *report, char **out);

/*
 Human-readable summary. Free the result with [`ts_string_free`].

 # Safety
 `report` must be a live handle and `out` a valid pointer.
 */
enum TsStatus ts_report_to_text(const struct TsReport *report, char **out);

/*
 Looks up one statistic by its flat key, such as `core0.ipc`.
 Boolean entries read as 0 or 1.

 # Safety
 `report` must be a live handle, `key` a NUL-terminated string and `out` a valid pointer.
 */
enum TsStatus ts_report_get(const struct TsReport *report, const char *key, double *out);

/*
 # Safety
 `report` must be null or a handle that was not freed yet.
 */
void ts_report_free(struct TsReport *report);

/*
 Writes a synthetic trace. `pattern` is one of `streaming-load`,
 `strided-load`, `random-load`, `loop-branch`, `pointer-chase` or
 `pure-arithmetic`; other parameters take their defaults. A `.gz` or `.xz`
 extension on `path` selects compression.

 # Safety
 `pattern` and `path` must be NUL-terminated strings; `records` may be null.
 */
enum TsStatus ts_tracegen(const char *pattern,
                          uint64_t length,
                          uint64_t seed,
                          const char *path,
                          uint64_t *records);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRACESIM_H */
