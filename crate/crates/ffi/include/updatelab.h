#ifndef UPDATELAB_H
#define UPDATELAB_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UlStatus {
  UL_STATUS_OK = 0,
  UL_STATUS_NULL_ARGUMENT = 1,
  UL_STATUS_INVALID_UTF8 = 2,
  UL_STATUS_VALIDATION = 3,
  UL_STATUS_USAGE = 4,
  UL_STATUS_GENERATION = 5,
  UL_STATUS_RESOURCE = 6,
  UL_STATUS_DATA = 7,
  UL_STATUS_STATE = 8,
  UL_STATUS_NOT_FOUND = 9,
  UL_STATUS_IO = 10,
  UL_STATUS_JSON = 11,
  UL_STATUS_PANIC = 99,
} UlStatus;

typedef struct UlBank UlBank;

typedef struct UlBoard UlBoard;

typedef struct UlLab UlLab;

/**
 * Five preference weights: blue, green, red, lava entry, per step.
 */
typedef struct UlWeights {
  double blue;
  double green;
  double red;
  double lava;
  double step;
} UlWeights;

/**
 * Event counts of one episode.
 */
typedef struct UlFeatureCounts {
  uint32_t blue;
  uint32_t green;
  uint32_t red;
  uint32_t lava;
  uint32_t steps;
} UlFeatureCounts;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next failing call on the same thread.
 */
const char *ul_last_error(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 */
void ul_string_free(char *s);

struct UlWeights ul_evaluation_weights(void);

enum UlStatus ul_score(const struct UlFeatureCounts *counts,
                       const struct UlWeights *weights,
                       double *out);

/**
 * Score of a trajectory given as JSON.
 */
enum UlStatus ul_trajectory_score(const char *trajectory_json,
                                  const struct UlWeights *weights,
                                  double *out);

enum UlStatus ul_board_from_json(const char *json, struct UlBoard **out);

/**
 * Generates a board with the default parameters.
 */
enum UlStatus ul_board_generate(uint64_t seed, struct UlBoard **out);

enum UlStatus ul_board_to_json(const struct UlBoard *board, char **out);

void ul_board_free(struct UlBoard *board);

/**
 * The six default policies, fully connected.
 */
enum UlStatus ul_bank_default(struct UlBank **out);

enum UlStatus ul_bank_from_json(const char *json, struct UlBank **out);

enum UlStatus ul_bank_to_json(const struct UlBank *bank, char **out);

/**
 * Number of policies, or 0 for NULL.
 */
size_t ul_bank_len(const struct UlBank *bank);

void ul_bank_free(struct UlBank *bank);

/**
 * Runs one bank policy on a board; writes the trajectory as JSON.
 */
enum UlStatus ul_rollout_json(const struct UlBank *bank,
                              uint32_t policy_id,
                              const struct UlBoard *board,
                              char **out);

/**
 * Mean score of a bank policy over `n` boards.
 */
enum UlStatus ul_policy_value(const struct UlBank *bank,
                              uint32_t policy_id,
                              const struct UlBoard *const *boards,
                              size_t n,
                              const struct UlWeights *weights,
                              double *out);

/**
 * Default bank, pool and feedback boards generated from `seed`.
 */
enum UlStatus ul_lab_generate(uint64_t seed, struct UlLab **out);

void ul_lab_free(struct UlLab *lab);

/**
 * Pool-mean evaluation score of a bank policy.
 */
enum UlStatus ul_lab_pool_value(const struct UlLab *lab, uint32_t policy_id, double *out);

/**
 * Runs a simulated session described by a session config JSON; writes
 * the session record as JSON.
 */
enum UlStatus ul_run_session(const struct UlLab *lab,
                             const char *session_id,
                             const char *config_json,
                             char **out);

/**
 * Re-derives a session record; `matches` is set to whether it agrees.
 */
enum UlStatus ul_replay_verify(const struct UlLab *lab, const char *record_json, bool *matches);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UPDATELAB_H */
