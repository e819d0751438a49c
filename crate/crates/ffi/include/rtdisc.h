#ifndef RTDISC_H
#define RTDISC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RtdiscStatus {
  RTDISC_STATUS_OK = 0,
  RTDISC_STATUS_NULL_POINTER = 1,
  RTDISC_STATUS_INVALID_ARGUMENT = 2,
  RTDISC_STATUS_IO = 3,
  RTDISC_STATUS_PARSE = 4,
  RTDISC_STATUS_CHECKSUM = 5,
  RTDISC_STATUS_MISSING_QUBIT = 6,
  RTDISC_STATUS_RANGE = 7,
  RTDISC_STATUS_OVERFLOW = 8,
  RTDISC_STATUS_PANIC = 9,
} RtdiscStatus;

/**
 * Opaque model handle.
 */
typedef struct RtdiscModel RtdiscModel;

/**
 * Result of one fixed-point inference.
 */
typedef struct RtdiscInference {
  /**
   * 0 ground, 1 excited.
   */
  uint8_t state;
  /**
   * Sigmoid table output, raw Q10.17.
   */
  int64_t prob_word;
  /**
   * Output-layer sum, raw Q10.17.
   */
  int64_t logit;
  uint32_t lut_address;
  /**
   * Saturation events along the pipeline.
   */
  uint32_t overflows;
} RtdiscInference;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads the model for `qubit` from the bank file at `path` (UTF-8, NUL
 * terminated). On success `*out` owns a handle to release with
 * `rtdisc_model_free`; on failure it is set to NULL.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum RtdiscStatus rtdisc_model_load(const char *path, uint8_t qubit, struct RtdiscModel **out);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `model` must come from `rtdisc_model_load` and not be used afterwards.
 */
void rtdisc_model_free(struct RtdiscModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum RtdiscStatus rtdisc_model_qubit(const struct RtdiscModel *model, uint8_t *out);

/**
 * Classifies one accumulated shot given as integer I and Q accumulates.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum RtdiscStatus rtdisc_model_infer(const struct RtdiscModel *model,
                                     int64_t raw_i,
                                     int64_t raw_q,
                                     struct RtdiscInference *out);

/**
 * Shift-only normalization `((value - mu + 2^n) << 17) >> (n + 1)` as a raw
 * Q10.17 word.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum RtdiscStatus rtdisc_scale_shift(int64_t value, uint32_t n, int64_t mu, int32_t *out);

/**
 * Truncating Q10.17 encoding of `x` as a raw word.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum RtdiscStatus rtdisc_encode_q10_17(double x, int32_t *out);

/**
 * Pipeline latency of the default 2-8-4-1 network, in clock cycles.
 */
uint32_t rtdisc_default_total_cycles(void);

/**
 * Message for the last failing call on this thread; empty if none.
 */
const char *rtdisc_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RTDISC_H */
