#ifndef V2X_SCHED_H
#define V2X_SCHED_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>
#include <stddef.h>
#include <stdint.h>

typedef enum V2xStatus {
  V2X_STATUS_OK = 0,
  V2X_STATUS_NULL_POINTER = 1,
  V2X_STATUS_INVALID_ARGUMENT = 2,
  V2X_STATUS_CONFIG = 3,
  V2X_STATUS_IO = 4,
  V2X_STATUS_SCHEMA = 5,
  V2X_STATUS_EPISODE_FINISHED = 6,
  V2X_STATUS_BUFFER_TOO_SMALL = 7,
  V2X_STATUS_PANIC = 8,
} V2xStatus;

/**
 * Trained Q-network scheduler.
 */
typedef struct V2xAgent V2xAgent;

/**
 * Simulation environment with its resolved configuration.
 */
typedef struct V2xEnv V2xEnv;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message (NUL-terminated, truncated to fit) into
 * `buf` and returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
uintptr_t v2x_last_error_message(char *buf, uintptr_t len);

/**
 * Creates an environment from a TOML config (null means defaults) and a
 * master seed. Writes the handle to `out`.
 *
 * # Safety
 * `config_toml` must be null or a NUL-terminated string; `out` must be valid
 * for writes.
 */
enum V2xStatus v2x_env_new(const char *config_toml, uint64_t seed, struct V2xEnv **out);

/**
 * # Safety
 * `env` must be null or a handle from [`v2x_env_new`] not yet freed.
 */
void v2x_env_free(struct V2xEnv *env);

/**
 * Length of the observation vector.
 *
 * # Safety
 * `env` must be a live handle or null (returns 0).
 */
uintptr_t v2x_env_state_dim(const struct V2xEnv *env);

/**
 * Number of actions.
 *
 * # Safety
 * `env` must be a live handle or null (returns 0).
 */
uintptr_t v2x_env_n_actions(const struct V2xEnv *env);

/**
 * Starts a new episode on the scenario drawn from `scenario_seed` and
 * writes the observation to `state_out`.
 *
 * # Safety
 * `env` must be a live handle; `state_out` must hold `state_len` doubles.
 */
enum V2xStatus v2x_env_reset(struct V2xEnv *env,
                             uint64_t scenario_seed,
                             double *state_out,
                             uintptr_t state_len);

/**
 * Schedules `action` for one slot. Writes the next observation, the reward
 * and whether the episode ended (1) or not (0).
 *
 * # Safety
 * `env` must be a live handle; the output pointers must be valid.
 */
enum V2xStatus v2x_env_step(struct V2xEnv *env,
                            uintptr_t action,
                            double *state_out,
                            uintptr_t state_len,
                            double *reward_out,
                            int32_t *done_out);

/**
 * Loads a checkpoint; its architecture must match the config (null means
 * defaults).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `config_toml` null or
 * NUL-terminated; `out` valid for writes.
 */
enum V2xStatus v2x_agent_load(const char *path, const char *config_toml, struct V2xAgent **out);

/**
 * # Safety
 * `agent` must be null or a handle from [`v2x_agent_load`] not yet freed.
 */
void v2x_agent_free(struct V2xAgent *agent);

/**
 * Greedy action for `state`.
 *
 * # Safety
 * `agent` must be a live handle; `state` must hold `state_len` doubles;
 * `action_out` valid for writes.
 */
enum V2xStatus v2x_agent_act(const struct V2xAgent *agent,
                             const double *state,
                             uintptr_t state_len,
                             uintptr_t *action_out);

/**
 * Line-of-sight path loss in dB.
 */
double v2x_path_loss_db(double distance_m, double carrier_freq_hz);

/**
 * Whole grids deliverable from `n` per-sub-slot rates.
 *
 * # Safety
 * `rates_bps` must hold `n` doubles (or be null when `n` is 0).
 */
uintptr_t v2x_grid_budget(const double *rates_bps,
                          uintptr_t n,
                          double subslot_s,
                          double payload_bits);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* V2X_SCHED_H */
