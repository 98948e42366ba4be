#ifndef LINCHECK_H
#define LINCHECK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of an FFI call.
 */
typedef enum LcStatus {
  LC_STATUS_OK = 0,
  /**
   * The check ran and the answer is negative.
   */
  LC_STATUS_NEGATIVE = 1,
  /**
   * Malformed input, such as bad JSON or an invalid configuration.
   */
  LC_STATUS_INPUT = 2,
  /**
   * Enumeration exceeded its state cap.
   */
  LC_STATUS_CAP = 3,
  /**
   * A required pointer was null.
   */
  LC_STATUS_NULL_POINTER = 4,
  /**
   * Internal failure; see `lc_last_error`.
   */
  LC_STATUS_INTERNAL = 5,
} LcStatus;

/**
 * A stack configuration: processes, value domain and operations per process.
 */
typedef struct LcConfig LcConfig;

/**
 * A parsed history.
 */
typedef struct LcHistory LcHistory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *lc_last_error(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void lc_string_free(char *s);

/**
 * Parses a history from its JSON text.
 *
 * # Safety
 * `json` must be a nul-terminated string and `out` a valid pointer.
 */
enum LcStatus lc_history_from_json(const char *json, struct LcHistory **out);

/**
 * Number of events in a history, or 0 for null.
 *
 * # Safety
 * `h` must be null or a live handle.
 */
size_t lc_history_len(const struct LcHistory *h);

/**
 * # Safety
 * `h` must be null or a live handle, which is invalid afterwards.
 */
void lc_history_free(struct LcHistory *h);

/**
 * Checks a history against the sequential stack over the given values.
 * Returns `Ok` if linearisable and `Negative` if not. On `Ok` the witness
 * is written to `witness_json` when that is non-null.
 *
 * # Safety
 * `h` must be a live handle, `valdom` must point to `n` values, and
 * `witness_json` must be null or valid.
 */
enum LcStatus lc_check_stack(const struct LcHistory *h,
                             const int64_t *valdom,
                             size_t n,
                             char **witness_json);

/**
 * Creates a stack configuration.
 *
 * # Safety
 * `valdom` must point to `n` values and `out` must be valid.
 */
enum LcStatus lc_config_new(size_t procs,
                            const int64_t *valdom,
                            size_t n,
                            uint32_t ops_per_proc,
                            struct LcConfig **out);

/**
 * # Safety
 * `c` must be null or a live handle, which is invalid afterwards.
 */
void lc_config_free(struct LcConfig *c);

/**
 * Generates streams of a stack program and checks the extracted
 * histories. `samples == 0` selects exhaustive enumeration. Returns
 * `Negative` if some history is not linearisable. The counts are written
 * to the non-null out-parameters.
 *
 * # Safety
 * `cfg` must be a live handle, `program` a nul-terminated string and the
 * out-parameters null or valid.
 */
enum LcStatus lc_simulate(const struct LcConfig *cfg,
                          const char *program,
                          size_t horizon,
                          uint64_t seed,
                          size_t samples,
                          size_t *streams,
                          size_t *histories,
                          size_t *non_linearisable);

/**
 * Behaviour refinement of `abstract_program` by `concrete_program` over
 * every interval of the generated concrete streams. Returns `Ok` if it
 * holds and `Negative` if not. The JSON verdict, with a witness trace on
 * failure, is written to `verdict_json` when that is non-null.
 *
 * # Safety
 * `cfg` must be a live handle, the names nul-terminated strings and
 * `verdict_json` null or valid.
 */
enum LcStatus lc_refine_behaviour(const struct LcConfig *cfg,
                                  const char *abstract_program,
                                  const char *concrete_program,
                                  size_t horizon,
                                  uint64_t seed,
                                  size_t samples,
                                  char **verdict_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LINCHECK_H */
