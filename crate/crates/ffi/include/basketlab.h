#ifndef BASKETLAB_H
#define BASKETLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BlStatus {
  BL_STATUS_OK = 0,
  BL_STATUS_NULL_POINTER = 1,
  BL_STATUS_INVALID_UTF8 = 2,
  BL_STATUS_INVALID_ARGUMENT = 3,
  BL_STATUS_ILLEGAL_ACTION = 4,
  BL_STATUS_NOT_FINISHED = 5,
  BL_STATUS_INTERNAL = 6,
} BlStatus;

typedef enum BlPhase {
  BL_PHASE_DEFAULT_OFFER = 0,
  BL_PHASE_PLAYING = 1,
  BL_PHASE_LATE_SUGGESTION = 2,
  BL_PHASE_DONE = 3,
} BlPhase;

/**
 * A trial in progress: the game, its nudge and the player's state.
 */
typedef struct BlTrial BlTrial;

typedef struct BlOutcome {
  int64_t gross;
  int64_t reveal_cost;
  int64_t net;
} BlOutcome;

typedef struct BlKsResult {
  double d;
  double p_value;
  size_t n_x;
  size_t n_y;
} BlKsResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. Valid until the
 * next failing call on the same thread; do not free.
 */
const char *bl_last_error(void);

/**
 * Library version as a static string; do not free.
 */
const char *bl_version(void);

/**
 * Releases a string returned by this library.
 */
void bl_string_free(char *s);

/**
 * A control trial (no nudge) on a freshly sampled game.
 */
enum BlStatus bl_trial_new_control(size_t n_prizes,
                                   size_t n_baskets,
                                   uint32_t reveal_cost,
                                   uint64_t seed,
                                   struct BlTrial **out);

/**
 * A trial from a JSON trial spec (as printed by `basketlab schedule`),
 * with its nudge applied.
 */
enum BlStatus bl_trial_new_from_spec(const char *spec_json, struct BlTrial **out);

void bl_trial_free(struct BlTrial *trial);

/**
 * Reveals a cell (zero-based indices) and writes its value.
 */
enum BlStatus bl_trial_reveal(struct BlTrial *trial, size_t prize, size_t basket, uint8_t *value);

enum BlStatus bl_trial_select(struct BlTrial *trial, size_t basket);

enum BlStatus bl_trial_default_decision(struct BlTrial *trial, bool accept);

enum BlStatus bl_trial_phase(const struct BlTrial *trial, enum BlPhase *phase);

enum BlStatus bl_trial_accumulated_cost(const struct BlTrial *trial, uint32_t *cost);

/**
 * Outcome of a finished trial; `BL_STATUS_NOT_FINISHED` before that.
 */
enum BlStatus bl_trial_outcome(const struct BlTrial *trial, struct BlOutcome *outcome);

/**
 * The table text a player sees (hidden cells as `?`).
 */
enum BlStatus bl_trial_render_table(const struct BlTrial *trial, char **text);

/**
 * The player's observation as JSON; hidden cells are null.
 */
enum BlStatus bl_trial_observation_json(const struct BlTrial *trial, char **json);

/**
 * The trial as a record JSON line (agent kind `human`). Only trials made
 * from a spec carry enough context to be recorded.
 */
enum BlStatus bl_trial_record_json(const struct BlTrial *trial,
                                   const char *run_id,
                                   const char *participant_id,
                                   char **json);

/**
 * Checks a record JSON line: schema version, replayable events and the
 * stored outcome.
 */
enum BlStatus bl_record_validate(const char *json);

enum BlStatus bl_ks_two_sample(const double *xs,
                               size_t n_x,
                               const double *ys,
                               size_t n_y,
                               struct BlKsResult *out);

/**
 * Benjamini–Hochberg adjustment of `n` p-values into `adjusted` (which
 * may alias `p_values`).
 */
enum BlStatus bl_bh_adjust(const double *p_values, size_t n, double *adjusted);

/**
 * L1 distance of the prize weights from the uniform vector.
 */
enum BlStatus bl_idiosyncrasy(const uint32_t *weights, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BASKETLAB_H */
