#ifndef STRATA_H
#define STRATA_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum StrataStatus {
  STRATA_STATUS_OK = 0,
  STRATA_STATUS_NULL_POINTER = 1,
  STRATA_STATUS_INVALID_UTF8 = 2,
  STRATA_STATUS_INVALID_ARGUMENT = 3,
  STRATA_STATUS_NOT_FOUND = 4,
  STRATA_STATUS_INVALID_TRANSITION = 5,
  STRATA_STATUS_IO = 6,
  STRATA_STATUS_PARSE = 7,
  STRATA_STATUS_DUPLICATE = 8,
  STRATA_STATUS_INTERNAL = 9,
} StrataStatus;

/**
 * Entity registry with its clock.
 */
typedef struct StrataRegistry StrataRegistry;

/**
 * Batch simulator handle.
 */
typedef struct StrataSimCluster StrataSimCluster;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *strata_last_error(void);

/**
 * Release a string returned through an `out` parameter.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void strata_string_free(char *s);

const char *strata_version(void);

/**
 * A registry on the system clock, or on a virtual clock that only moves
 * through [`strata_registry_set_time_ns`].
 */
struct StrataRegistry *strata_registry_new(bool virtual_time);

/**
 * # Safety
 * `reg` must be NULL or a live handle from [`strata_registry_new`].
 */
void strata_registry_free(struct StrataRegistry *reg);

/**
 * # Safety
 * `reg` must be a live registry handle.
 */
enum StrataStatus strata_registry_set_time_ns(struct StrataRegistry *reg, uint64_t ns);

/**
 * Register `uid` as an entity of `kind` (`task`, `pilot` or `job`).
 *
 * # Safety
 * `reg` must be a live registry handle; strings must be NUL-terminated.
 */
enum StrataStatus strata_registry_register(struct StrataRegistry *reg,
                                           const char *uid,
                                           const char *kind);

/**
 * # Safety
 * As [`strata_registry_register`].
 */
enum StrataStatus strata_registry_advance(struct StrataRegistry *reg,
                                          const char *uid,
                                          const char *state);

/**
 * # Safety
 * As [`strata_registry_register`].
 */
enum StrataStatus strata_registry_record_event(struct StrataRegistry *reg,
                                               const char *uid,
                                               const char *name);

/**
 * # Safety
 * As [`strata_registry_register`].
 */
enum StrataStatus strata_registry_record_error(struct StrataRegistry *reg,
                                               const char *uid,
                                               const char *code,
                                               const char *message);

/**
 * Current state of `uid`, written to `*out` (free with [`strata_string_free`]).
 *
 * # Safety
 * As [`strata_registry_register`]; `out` must be writable.
 */
enum StrataStatus strata_registry_current_state(const struct StrataRegistry *reg,
                                                const char *uid,
                                                char **out);

/**
 * Write the registry's trace as NDJSON to `path`.
 *
 * # Safety
 * As [`strata_registry_register`].
 */
enum StrataStatus strata_registry_export_trace(const struct StrataRegistry *reg, const char *path);

/**
 * Validate a trace file. `checks` is a comma-separated list of check names,
 * or NULL for all of them. The number of violations goes to
 * `*out_violations`; the canonical JSON list of them to `*out_json` when
 * `out_json` is not NULL.
 *
 * # Safety
 * Strings must be NUL-terminated; out pointers writable or NULL where allowed.
 */
enum StrataStatus strata_trace_check(const char *path,
                                     const char *checks,
                                     size_t *out_violations,
                                     char **out_json);

/**
 * `model_json` is a queue-time model such as `{"kind":"constant","delay_s":10}`;
 * NULL selects the backlog-only model. Returns NULL on error.
 *
 * # Safety
 * Strings must be NUL-terminated or NULL where allowed.
 */
struct StrataSimCluster *strata_sim_new(const char *resource_id,
                                        uint32_t nodes,
                                        uint32_t cores_per_node,
                                        uint32_t gpus_per_node,
                                        const char *model_json);

/**
 * # Safety
 * `sim` must be NULL or a live handle from [`strata_sim_new`].
 */
void strata_sim_free(struct StrataSimCluster *sim);

/**
 * # Safety
 * `sim` must be a live handle; `uid` NUL-terminated.
 */
enum StrataStatus strata_sim_submit(struct StrataSimCluster *sim_handle,
                                    const char *uid,
                                    uint32_t cores,
                                    double runtime_s);

/**
 * Advance the simulator to `t` seconds.
 *
 * # Safety
 * `sim` must be a live handle.
 */
enum StrataStatus strata_sim_advance_to(struct StrataSimCluster *sim_handle, double t);

/**
 * # Safety
 * `sim` must be a live handle; `out` writable.
 */
enum StrataStatus strata_sim_estimate_wait(struct StrataSimCluster *sim_handle,
                                           uint32_t cores,
                                           double *out);

/**
 * Start time of job `uid` in seconds, or a negative value while it has not
 * started.
 *
 * # Safety
 * `sim` must be a live handle; `uid` NUL-terminated; `out` writable.
 */
enum StrataStatus strata_sim_job_start(struct StrataSimCluster *sim_handle,
                                       const char *uid,
                                       double *out);

/**
 * Export a JSON array of exchange records (each with `schema_version`) into
 * `dir` as `<uid>.task.json` files. The file count goes to `*out_count`.
 *
 * # Safety
 * Strings must be NUL-terminated; `out_count` writable.
 */
enum StrataStatus strata_tasks_export(const char *dir, const char *records_json, size_t *out_count);

/**
 * Import every `*.task.json` in `dir`. `*out_json` receives
 * `{"rejects":[{"path","reason"}...],"tasks":[record...]}` in canonical form.
 *
 * # Safety
 * `dir` must be NUL-terminated; `out_json` writable.
 */
enum StrataStatus strata_tasks_import(const char *dir, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STRATA_H */
