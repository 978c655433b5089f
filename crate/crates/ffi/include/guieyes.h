#ifndef GUIEYES_H
#define GUIEYES_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GeStatus {
  GE_STATUS_OK = 0,
  GE_STATUS_NULL_POINTER = 1,
  GE_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The text did not parse under the action grammar.
   */
  GE_STATUS_FORMAT_ERROR = 3,
  /**
   * The trainer has completed all configured steps.
   */
  GE_STATUS_FINISHED = 4,
  GE_STATUS_INTERNAL = 5,
  GE_STATUS_PANIC = 6,
} GeStatus;

typedef enum GeActionKind {
  GE_ACTION_KIND_ANSWER = 0,
  GE_ACTION_KIND_CROP = 1,
  GE_ACTION_KIND_ZOOM = 2,
} GeActionKind;

typedef enum GeVariant {
  GE_VARIANT_FULL = 0,
  GE_VARIANT_CENTER_ONLY = 1,
  GE_VARIANT_OVERLAP_ONLY = 2,
} GeVariant;

/**
 * Opaque reward weights.
 */
typedef struct GeRewardWeights GeRewardWeights;

/**
 * Opaque toy-policy training run.
 */
typedef struct GeTrainer GeTrainer;

/**
 * Axis-aligned box in pixels, `x1 <= x2`, `y1 <= y2`.
 */
typedef struct GeBox {
  double x1;
  double y1;
  double x2;
  double y2;
} GeBox;

typedef struct GePoint {
  double x;
  double y;
} GePoint;

/**
 * Reward inputs of one trajectory, in original-image pixels.
 */
typedef struct GeOutcome {
  bool format_ok;
  bool used_tool;
  /**
   * Requested tool center; read when `used_tool`.
   */
  struct GePoint tool_center;
  /**
   * Region the tool showed; read when `used_tool`.
   */
  struct GeBox tool_region;
  bool has_point;
  struct GePoint point;
  struct GeBox gt;
} GeOutcome;

typedef struct GeRewardBreakdown {
  double r_format;
  double r_acc;
  double r_tool;
  double center_term;
  double overlap_term;
  double total;
} GeRewardBreakdown;

/**
 * A parsed action. `point` is set for answers; `center`, `width` and
 * `height` for tool calls; `scale` is 1 except for zoom.
 */
typedef struct GeAction {
  enum GeActionKind kind;
  struct GePoint point;
  struct GePoint center;
  double width;
  double height;
  double scale;
} GeAction;

typedef struct GeStepMetrics {
  uint64_t step;
  double mean_reward;
  double success_rate;
  double tool_rate;
} GeStepMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ge_version(void);

/**
 * Message of the last failed call on this thread, or null after a
 * successful call. Valid until the next call on the same thread.
 */
const char *ge_last_error_message(void);

/**
 * Default weights. Never null; release with [`ge_reward_weights_free`].
 */
struct GeRewardWeights *ge_reward_weights_default(void);

/**
 * Weights from flat TOML text (`lambda_acc = 0.6` ...); unset keys keep defaults.
 */
enum GeStatus ge_reward_weights_from_toml(const char *toml, struct GeRewardWeights **out_handle);

/**
 * Sets one weight by name. The handle is unchanged if the result is invalid.
 */
enum GeStatus ge_reward_weights_set(struct GeRewardWeights *handle, const char *name, double value);

enum GeStatus ge_reward_weights_get(const struct GeRewardWeights *handle,
                                    const char *name,
                                    double *out_value);

/**
 * Releases weights; null is ignored.
 */
void ge_reward_weights_free(struct GeRewardWeights *handle);

/**
 * `|crop ∩ gt| / |gt|`.
 */
enum GeStatus ge_coverage(struct GeBox crop, struct GeBox gt, double *out_value);

/**
 * Gaussian proximity of `center` to `gt` under `weights`.
 */
enum GeStatus ge_center_term(const struct GeRewardWeights *weights,
                             struct GePoint center,
                             struct GeBox gt,
                             double *out_value);

/**
 * Tool-image point to original-image point for a region shown at scale `z`.
 */
enum GeStatus ge_map_from_tool(struct GePoint p,
                               struct GeBox region,
                               double z,
                               struct GePoint *out_point);

/**
 * Original-image point to tool-image point; inverse of [`ge_map_from_tool`].
 */
enum GeStatus ge_map_to_tool(struct GePoint p,
                             struct GeBox region,
                             double z,
                             struct GePoint *out_point);

/**
 * All reward terms of one trajectory; `variant` is a [`GeVariant`] value.
 * Malformed trajectories score zero.
 */
enum GeStatus ge_total_reward(const struct GeRewardWeights *weights,
                              uint32_t variant,
                              const struct GeOutcome *outcome,
                              struct GeRewardBreakdown *out_reward);

/**
 * Parses one stage output (`stage` is 1 or 2). Returns
 * [`GeStatus::FormatError`] for text outside the grammar.
 */
enum GeStatus ge_parse_action(const char *raw, uint8_t stage, struct GeAction *out_action);

/**
 * Group-normalized advantages of `n >= 2` rewards, written to `out_values[0..n]`.
 */
enum GeStatus ge_group_advantages(const double *rewards, size_t n, double *out_values);

/**
 * `min(rho A, clip(rho, 1 - eps, 1 + eps) A)`.
 */
enum GeStatus ge_clipped_term(double rho, double advantage, double epsilon, double *out_value);

/**
 * Starts a toy training run. `config_toml` may be null for defaults.
 */
enum GeStatus ge_trainer_new(const char *config_toml, uint64_t seed, struct GeTrainer **out_handle);

/**
 * One GRPO update; writes the rollout metrics. Returns
 * [`GeStatus::Finished`] once all configured steps have run.
 */
enum GeStatus ge_trainer_step(struct GeTrainer *handle, struct GeStepMetrics *out_metrics);

/**
 * Held-out metrics of the current policy.
 */
enum GeStatus ge_trainer_evaluate(const struct GeTrainer *handle,
                                  struct GeStepMetrics *out_metrics);

/**
 * Releases a trainer; null is ignored.
 */
void ge_trainer_free(struct GeTrainer *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GUIEYES_H */
