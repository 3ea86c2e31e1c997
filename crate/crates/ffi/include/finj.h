#ifndef FINJ_H
#define FINJ_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum FinjStatus {
  FINJ_STATUS_OK = 0,
  FINJ_STATUS_NULL_ARGUMENT = 1,
  FINJ_STATUS_INVALID_UTF8 = 2,
  FINJ_STATUS_CONFIG = 3,
  FINJ_STATUS_IO = 4,
  FINJ_STATUS_PARSE = 5,
  FINJ_STATUS_BIND = 6,
  FINJ_STATUS_OUT_OF_RANGE = 7,
  FINJ_STATUS_GENERATE = 8,
  FINJ_STATUS_INJECT = 9,
  FINJ_STATUS_PANIC = 10,
} FinjStatus;

/**
 * A running engine.
 */
typedef struct FinjEngine FinjEngine;

/**
 * A workload loaded in memory.
 */
typedef struct FinjWorkload FinjWorkload;

/**
 * One task of a workload. The strings belong to the workload and stay
 * valid until it is freed.
 */
typedef struct FinjTask {
  uint64_t timestamp;
  uint64_t duration;
  uint64_t seq_num;
  bool is_fault;
  const char *args;
  /**
   * Canonical core list such as "0-2,6"; empty when unpinned.
   */
  const char *cores;
} FinjTask;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes, or 0 if
 * there is none.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t finj_last_error(char *buf, size_t len);

/**
 * Starts an engine. `config_path` may be null for defaults; `port`
 * overrides the configured port when in 0..=65535 (0 picks a free port),
 * and is ignored when negative.
 *
 * # Safety
 * `config_path` must be null or a NUL-terminated string; `out` must be
 * valid for writes.
 */
enum FinjStatus finj_engine_start(const char *config_path, int32_t port, struct FinjEngine **out);

/**
 * Port the engine listens on, or 0 for a null handle.
 *
 * # Safety
 * `engine` must be null or a live handle from [`finj_engine_start`].
 */
uint16_t finj_engine_port(const struct FinjEngine *engine);

/**
 * Stops the engine, terminating its tasks, and frees the handle.
 *
 * # Safety
 * `engine` must be null or a live handle; it is invalid afterwards.
 */
void finj_engine_stop(struct FinjEngine *engine);

/**
 * Loads a workload file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum FinjStatus finj_workload_open(const char *path, struct FinjWorkload **out);

/**
 * Number of tasks, or 0 for a null handle.
 *
 * # Safety
 * `workload` must be null or a live handle.
 */
size_t finj_workload_len(const struct FinjWorkload *workload);

/**
 * Copies task `index` into `out`.
 *
 * # Safety
 * `workload` must be a live handle; `out` must be valid for writes.
 */
enum FinjStatus finj_workload_task(const struct FinjWorkload *workload,
                                   size_t index,
                                   struct FinjTask *out);

/**
 * Counts validation findings (duplicate sequence numbers, empty
 * commands, ...). Zero means the workload is well formed.
 *
 * # Safety
 * `workload` must be a live handle; `findings` must be valid for writes.
 */
enum FinjStatus finj_workload_validate(const struct FinjWorkload *workload, size_t *findings);

/**
 * Frees a workload handle.
 *
 * # Safety
 * `workload` must be null or a live handle; it is invalid afterwards.
 */
void finj_workload_free(struct FinjWorkload *workload);

/**
 * Generates `workload.csv` and `workload_probe.csv` in `out_dir` from a
 * JSON spec. `tasks` (may be null) receives the workload's task count.
 *
 * # Safety
 * String arguments must be NUL-terminated; `tasks` null or writable.
 */
enum FinjStatus finj_generate(const char *spec_path, const char *out_dir, size_t *tasks);

/**
 * Runs a full injection session. `targets` is a comma-separated
 * `host:port` list; `config_path` may be null. `exit_code` (may be null)
 * receives 0 for a clean session and 1 otherwise.
 *
 * # Safety
 * String arguments must be NUL-terminated (config_path may be null);
 * `exit_code` null or writable.
 */
enum FinjStatus finj_inject(const char *workload,
                            const char *targets,
                            const char *config_path,
                            int32_t *exit_code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FINJ_H */
