#ifndef QTR_H
#define QTR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Zero is success.
typedef enum QtrStatus {
  QTR_STATUS_OK = 0,
  QTR_STATUS_NULL_ARGUMENT = 1,
  QTR_STATUS_INVALID_ARGUMENT = 2,
  QTR_STATUS_NOT_FOUND = 3,
  QTR_STATUS_IO = 4,
  QTR_STATUS_FORMAT = 5,
  QTR_STATUS_SESSION = 6,
  QTR_STATUS_REPLAY = 7,
  QTR_STATUS_PANIC = 8,
} QtrStatus;

// Session configuration.
typedef struct QtrConfig QtrConfig;

// Outcome of one session, including its trace.
typedef struct QtrResult QtrResult;

// A loaded question suite.
typedef struct QtrSuite QtrSuite;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or NULL. Valid until
// the next qtr call on this thread; do not free.
const char *qtr_last_error(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void qtr_string_free(char *s);

// Library version as a static NUL-terminated string.
const char *qtr_version(void);

// Loads the built-in three-world suite.
//
// # Safety
// `out` must be a valid pointer to writable storage.
enum QtrStatus qtr_suite_builtin(struct QtrSuite **out);

// Loads a suite from a world document, an array of them, or a directory.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum QtrStatus qtr_suite_load(const char *path, struct QtrSuite **out);

// Number of questions across all worlds of the suite; 0 for NULL.
//
// # Safety
// `suite` must be NULL or a live handle.
size_t qtr_suite_question_count(const struct QtrSuite *suite);

// # Safety
// `suite` must be NULL or a handle not yet freed.
void qtr_suite_free(struct QtrSuite *suite);

// Default session configuration.
//
// # Safety
// `out` must be writable.
enum QtrStatus qtr_config_new(struct QtrConfig **out);

// Configuration parsed from JSON; missing fields take defaults.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum QtrStatus qtr_config_from_json(const char *json, struct QtrConfig **out);

// # Safety
// `cfg` must be a live handle.
enum QtrStatus qtr_config_set_seed(struct QtrConfig *cfg, uint64_t seed);

// Disables one component: "no-rtp", "no-tm" or "no-tcr".
//
// # Safety
// `cfg` must be a live handle; `name` a NUL-terminated string.
enum QtrStatus qtr_config_add_ablation(struct QtrConfig *cfg, const char *name);

// # Safety
// `cfg` must be NULL or a handle not yet freed.
void qtr_config_free(struct QtrConfig *cfg);

// Answers one suite question with the scripted ports of its world.
//
// # Safety
// `suite` and `cfg` must be live handles, `question_id` a NUL-terminated
// string and `out` writable.
enum QtrStatus qtr_run_question(const struct QtrSuite *suite,
                                const char *question_id,
                                const struct QtrConfig *cfg,
                                struct QtrResult **out);

// Re-runs a recorded trace file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` writable.
enum QtrStatus qtr_replay_trace(const char *path, struct QtrResult **out);

// Final answer text (caller frees), or NULL for a NULL handle.
//
// # Safety
// `result` must be NULL or a live handle.
char *qtr_result_answer(const struct QtrResult *result);

// Confidence score 1..=100 of the final answer; 0 for NULL.
//
// # Safety
// `result` must be NULL or a live handle.
uint8_t qtr_result_confidence(const struct QtrResult *result);

// Frames embedded during the session; 0 for NULL.
//
// # Safety
// `result` must be NULL or a live handle.
uint64_t qtr_result_total_frames(const struct QtrResult *result);

// Iterations run; 0 for NULL.
//
// # Safety
// `result` must be NULL or a live handle.
uint32_t qtr_result_iterations(const struct QtrResult *result);

// 1 if the answer matched the gold answer, 0 if not, -1 when unknown
// (replayed results, NULL).
//
// # Safety
// `result` must be NULL or a live handle.
int32_t qtr_result_correct(const struct QtrResult *result);

// Hex SHA-256 of the trace (caller frees), or NULL.
//
// # Safety
// `result` must be NULL or a live handle.
char *qtr_result_trace_hash(const struct QtrResult *result);

// Whole result as JSON (caller frees), or NULL.
//
// # Safety
// `result` must be NULL or a live handle.
char *qtr_result_to_json(const struct QtrResult *result);

// Writes the session trace as NDJSON.
//
// # Safety
// `result` must be a live handle and `path` a NUL-terminated string.
enum QtrStatus qtr_result_write_trace(const struct QtrResult *result, const char *path);

// # Safety
// `result` must be NULL or a handle not yet freed.
void qtr_result_free(struct QtrResult *result);

// Runs the whole suite and returns the report as JSON through `out_json`
// (caller frees). `threads` of 0 uses one worker per core.
//
// # Safety
// `suite` and `cfg` must be live handles; `out_json` writable.
enum QtrStatus qtr_run_suite_json(const struct QtrSuite *suite,
                                  const struct QtrConfig *cfg,
                                  size_t threads,
                                  char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QTR_H */
