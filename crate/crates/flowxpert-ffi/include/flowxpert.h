/* C interface for the flowxpert flow classifier. Generated by cbindgen from crates/flowxpert-ffi; do not edit by hand. */

#ifndef FLOWXPERT_H
#define FLOWXPERT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Protocol code for TCP flows.
 */
#define FX_PROTOCOL_TCP 0

/**
 * Protocol code for UDP flows.
 */
#define FX_PROTOCOL_UDP 1

/**
 * Protocol code for anything that is neither TCP nor UDP.
 */
#define FX_PROTOCOL_OTHER 2

/**
 * Class code for benign predictions.
 */
#define FX_LABEL_BENIGN 0

/**
 * Class code for malicious predictions.
 */
#define FX_LABEL_MALICIOUS 1

/**
 * Result of every fallible call.
 */
typedef enum FxStatus {
  /**
   * The call succeeded.
   */
  FX_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  FX_STATUS_NULL_POINTER = 1,
  /**
   * An argument was present but unusable (bad protocol code, non-finite
   * feature, wrong buffer length, non-UTF-8 path).
   */
  FX_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The model file could not be read.
   */
  FX_STATUS_IO_ERROR = 3,
  /**
   * The model file was read but failed validation.
   */
  FX_STATUS_CORRUPT_MODEL = 4,
  /**
   * An unexpected internal failure; details via `fx_last_error`.
   */
  FX_STATUS_INTERNAL = 5,
} FxStatus;

/**
 * Opaque handle to a loaded model.
 */
typedef struct FxModel FxModel;

/**
 * Per-flow features, exactly as the extractor computes them.
 *
 * `protocol` must be one of the `FX_PROTOCOL_*` codes. All floating-point
 * fields must be finite. Counters are raw counts; rates are per second.
 */
typedef struct FxFlowStats {
  /**
   * One of `FX_PROTOCOL_TCP`, `FX_PROTOCOL_UDP`, `FX_PROTOCOL_OTHER`.
   */
  uint32_t protocol;
  /**
   * Flow duration in seconds.
   */
  double flow_dur;
  /**
   * Packets observed in the flow.
   */
  uint64_t pkt_num;
  /**
   * Packet rate over the flow's lifetime.
   */
  double pkts_per_sec;
  /**
   * Mean inter-arrival time in seconds.
   */
  double iat_mean;
  /**
   * Inter-arrival time standard deviation in seconds.
   */
  double iat_std;
  /**
   * SYN packets seen.
   */
  uint64_t syn_num;
  /**
   * FIN packets seen.
   */
  uint64_t fin_num;
  /**
   * RST packets seen.
   */
  uint64_t rst_num;
  /**
   * Distinct source ports used by the initiating host so far.
   */
  uint64_t num_s_port;
  /**
   * Distinct destination addresses contacted by the initiating host.
   */
  uint64_t num_d_ip;
  /**
   * Distinct destination ports contacted by the initiating host.
   */
  uint64_t num_d_port;
  /**
   * Connections per second opened by the initiating host.
   */
  double con_per_sec;
} FxFlowStats;

/**
 * Classification outcome for one flow.
 */
typedef struct FxPrediction {
  /**
   * `FX_LABEL_BENIGN` or `FX_LABEL_MALICIOUS`.
   */
  uint32_t label;
  /**
   * Probability the flow is benign.
   */
  float p_benign;
  /**
   * Probability the flow is malicious. Sums with `p_benign` to 1.
   */
  float p_malicious;
} FxPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a model file and hands back an owned handle through `out`.
 *
 * On failure `*out` is set to null and the status describes why.
 *
 * # Safety
 *
 * `path` must point to a NUL-terminated string; `out` must be a valid
 * location to store one pointer. Both must outlive the call.
 */
enum FxStatus fx_model_open(const char *path, struct FxModel **out);

/**
 * Releases a handle returned by [`fx_model_open`]. Null is a no-op.
 *
 * # Safety
 *
 * `model` must be null or a handle from `fx_model_open` that has not
 * already been closed. No other thread may be using it during the call.
 */
void fx_model_close(struct FxModel *model);

/**
 * Writes the model's trainable parameter count to `out`.
 *
 * # Safety
 *
 * `model` must be a live handle from [`fx_model_open`]; `out` must be a
 * valid location for one `uint64_t`.
 */
enum FxStatus fx_model_param_count(const struct FxModel *model, uint64_t *out);

/**
 * Writes the contrastive margin the model was trained with to `out`.
 *
 * # Safety
 *
 * `model` must be a live handle from [`fx_model_open`]; `out` must be a
 * valid location for one `double`.
 */
enum FxStatus fx_model_margin(const struct FxModel *model, double *out);

/**
 * Writes the width of the vectors produced by [`fx_embed`] to `out`.
 *
 * # Safety
 *
 * `model` must be a live handle from [`fx_model_open`]; `out` must be a
 * valid location for one `size_t`.
 */
enum FxStatus fx_model_embedding_dim(const struct FxModel *model, size_t *out);

/**
 * Classifies one flow and writes the outcome to `out`.
 *
 * # Safety
 *
 * `model` must be a live handle from [`fx_model_open`]; `flow` and `out`
 * must point to valid structs for the duration of the call.
 */
enum FxStatus fx_predict(const struct FxModel *model,
                         const struct FxFlowStats *flow,
                         struct FxPrediction *out);

/**
 * Writes the flow's embedding vector into `out`.
 *
 * `out_len` must equal the model's embedding width (see
 * [`fx_model_embedding_dim`]); anything else is rejected without touching
 * the buffer.
 *
 * # Safety
 *
 * `model` must be a live handle from [`fx_model_open`]; `flow` must point
 * to a valid struct; `out` must point to at least `out_len` writable
 * floats.
 */
enum FxStatus fx_embed(const struct FxModel *model,
                       const struct FxFlowStats *flow,
                       float *out,
                       size_t out_len);

/**
 * Returns the message for the most recent failure on the calling thread,
 * or an empty string when the last call succeeded. The pointer is valid
 * until the next library call on this thread.
 */
const char *fx_last_error(void);

/**
 * Returns the library version as a static NUL-terminated string.
 */
const char *fx_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLOWXPERT_H */
