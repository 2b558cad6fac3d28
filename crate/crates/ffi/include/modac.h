#ifndef MODAC_H
#define MODAC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status of a call.
typedef enum ModacStatus {
  MODAC_STATUS_OK = 0,
  // Null pointer, bad UTF-8 or an argument out of range.
  MODAC_STATUS_INVALID_ARGUMENT = 1,
  MODAC_STATUS_CONFIG = 2,
  // Non-finite values or divergence.
  MODAC_STATUS_NUMERIC = 3,
  // I/O, checkpoint or any other failure, panics included.
  MODAC_STATUS_FAILURE = 4,
} ModacStatus;

// A validated run config.
typedef struct ModacConfig ModacConfig;

// An agent training on the config's training tasks.
typedef struct ModacLearner ModacLearner;

// Outcome of one outer iteration.
typedef struct ModacReport {
  uint64_t frames;
  // 1 once an episode has finished; the return fields are 0 before.
  int32_t has_return;
  double return_mean;
  double return_sem;
  double option_step_frac;
  double option_pick_frac;
  // 0 when no option was picked.
  double mean_option_len;
  double meta_grad_norm;
} ModacReport;

// Headline numbers of a train and transfer pipeline.
typedef struct ModacSummary {
  // 0 for agents that skip training.
  uint64_t train_frames;
  double train_mean_option_len;
  uint64_t transfer_frames;
  double transfer_auc;
  double transfer_final_return;
  double transfer_option_pick_frac;
} ModacSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null after a
// success. Valid until the next call on the same thread.
const char *modac_last_error(void);

// Library version as a static string.
const char *modac_version(void);

// Frees a string returned by this library. Null is ignored.
//
// # Safety
// `s` is null or came from this library and was not freed before.
void modac_string_free(char *s);

// Parses a TOML config; null `toml` gives the defaults.
//
// # Safety
// `toml` is null or NUL-terminated; `out` points to writable storage.
enum ModacStatus modac_config_new(const char *toml, struct ModacConfig **out);

// Sets a dotted key, e.g. `hp.switching_cost` to `0.1`. The config is
// left unchanged when the result would be invalid.
//
// # Safety
// `cfg` is a live config; `key` and `value` are NUL-terminated.
enum ModacStatus modac_config_set(struct ModacConfig *cfg, const char *key, const char *value);

// The config as TOML; free with [`modac_string_free`]. Null on a null
// handle.
//
// # Safety
// `cfg` is null or a live config.
char *modac_config_to_toml(const struct ModacConfig *cfg);

// # Safety
// `cfg` is null or a config from [`modac_config_new`] not freed before.
void modac_config_free(struct ModacConfig *cfg);

// An agent of the config's method on its training tasks.
//
// # Safety
// `cfg` is a live config; `out` points to writable storage.
enum ModacStatus modac_learner_new(const struct ModacConfig *cfg,
                                   uint64_t seed,
                                   struct ModacLearner **out);

// Runs one outer iteration and fills `report` if it is not null.
//
// # Safety
// `learner` is a live learner; `report` is null or writable.
enum ModacStatus modac_learner_iterate(struct ModacLearner *learner, struct ModacReport *report);

// Frames consumed so far; 0 for a null handle.
//
// # Safety
// `learner` is null or a live learner.
uint64_t modac_learner_frames(const struct ModacLearner *learner);

// # Safety
// `learner` is null or came from [`modac_learner_new`] and was not freed.
void modac_learner_free(struct ModacLearner *learner);

// Train then transfer one seed, writing run directories under `dir`.
//
// # Safety
// `cfg` is a live config, `dir` NUL-terminated, `summary` null or
// writable.
enum ModacStatus modac_pipeline(const struct ModacConfig *cfg,
                                uint64_t seed,
                                const char *dir,
                                struct ModacSummary *summary);

// Runs the gradient and return oracle checks. Fails with
// `MODAC_STATUS_NUMERIC` when any check fails.
//
// # Safety
// `passed` and `total` are null or writable.
enum ModacStatus modac_selftest(uint32_t *passed, uint32_t *total);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MODAC_H */
