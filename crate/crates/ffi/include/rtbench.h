#ifndef RTBENCH_H
#define RTBENCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RtbStatus {
  RTB_STATUS_OK = 0,
  RTB_STATUS_NULL_POINTER = 1,
  RTB_STATUS_INVALID_ARGUMENT = 2,
  RTB_STATUS_PARSE = 3,
  RTB_STATUS_RUN_FAILED = 4,
  RTB_STATUS_INCOMPLETE = 5,
  RTB_STATUS_PANIC = 6,
} RtbStatus;

/**
 * Completed or parsed run handle.
 */
typedef struct RtbRun RtbRun;

/**
 * Run settings handle.
 */
typedef struct RtbSettings RtbSettings;

typedef struct RtbBox {
  double x1;
  double y1;
  double x2;
  double y2;
} RtbBox;

typedef struct RtbSummary {
  uint64_t count;
  uint64_t min_ns;
  uint64_t mean_ns;
  uint64_t max_ns;
  uint64_t p50_ns;
  uint64_t p90_ns;
  uint64_t p99_ns;
  uint64_t p999_ns;
  uint64_t overrun_count;
  uint64_t duration_ns;
  double completed_per_second;
} RtbSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into the library on this thread.
 */
const char *rtb_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rtb_version(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void rtb_string_free(char *s);

/**
 * Advances a splitmix64 state and returns the next output.
 *
 * # Safety
 * `state` must point to a valid `uint64_t`.
 */
enum RtbStatus rtb_splitmix64_next(uint64_t *state, uint64_t *out);

/**
 * Order statistic at rank `ceil(p * len)`.
 *
 * # Safety
 * `samples` must point to `len` readable values.
 */
enum RtbStatus rtb_percentile(const uint64_t *samples, size_t len, double p, uint64_t *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum RtbStatus rtb_min_query_count(double p, double confidence, uint64_t *out);

/**
 * # Safety
 * `passed` and `threshold` must be writable.
 */
enum RtbStatus rtb_accuracy_gate(double measured,
                                 double reference,
                                 double constraint,
                                 bool *passed,
                                 double *threshold);

/**
 * # Safety
 * `a`, `b` must be readable and `out` writable.
 */
enum RtbStatus rtb_iou(const struct RtbBox *a, const struct RtbBox *b, double *out);

/**
 * mAP over a detection record file's contents.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` writable.
 */
enum RtbStatus rtb_mean_ap(const char *text, double iou_threshold, double *out);

/**
 * Desk-default settings.
 */
struct RtbSettings *rtb_settings_new(void);

/**
 * Applies settings-file text on top of the handle's current values.
 *
 * # Safety
 * `settings` must come from [`rtb_settings_new`]; `text` NUL-terminated.
 */
enum RtbStatus rtb_settings_apply(struct RtbSettings *settings, const char *text);

/**
 * # Safety
 * `settings` must be null or come from [`rtb_settings_new`].
 */
void rtb_settings_free(struct RtbSettings *settings);

/**
 * Runs `profile` with `settings` against the endpoint named in the settings.
 * With `simulated_clock`, time is discrete-event and only `sim:` endpoints
 * make sense.
 *
 * # Safety
 * `profile` NUL-terminated, `settings` a valid handle, `out` writable. On
 * `RTB_STATUS_RUN_FAILED` the partial run is still returned in `out`.
 */
enum RtbStatus rtb_run(const char *profile,
                       const struct RtbSettings *settings,
                       bool simulated_clock,
                       struct RtbRun **out);

/**
 * Parses log text into a run handle.
 *
 * # Safety
 * `text` NUL-terminated, `out` writable.
 */
enum RtbStatus rtb_log_parse(const char *text, struct RtbRun **out);

/**
 * Summary recomputed from the run's trace.
 *
 * # Safety
 * `run` a valid handle, `out` writable.
 */
enum RtbStatus rtb_run_summary(const struct RtbRun *run, struct RtbSummary *out);

/**
 * Summary record stored in the log, if any. `present` is false when absent.
 *
 * # Safety
 * `run` a valid handle, `out` and `present` writable.
 */
enum RtbStatus rtb_run_embedded_summary(const struct RtbRun *run,
                                        struct RtbSummary *out,
                                        bool *present);

/**
 * Number of queries in the run's trace.
 *
 * # Safety
 * `run` must be a valid handle.
 */
uint64_t rtb_run_query_count(const struct RtbRun *run);

/**
 * Serialized run log. Release with [`rtb_string_free`].
 *
 * # Safety
 * `run` a valid handle, `out` writable.
 */
enum RtbStatus rtb_run_write_log(const struct RtbRun *run, char **out);

/**
 * # Safety
 * `run` must be null or a handle from this library.
 */
void rtb_run_free(struct RtbRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RTBENCH_H */
