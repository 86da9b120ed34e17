#ifndef SOGMNAV_H
#define SOGMNAV_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Prediction source for a simulated session.
 */
typedef enum SogmnavPredictor {
  SOGMNAV_PREDICTOR_NO_PREDS = 0,
  SOGMNAV_PREDICTOR_IGNORE_DYN = 1,
  SOGMNAV_PREDICTOR_LIN_SOGM = 2,
  SOGMNAV_PREDICTOR_GT_SOGM = 3,
  SOGMNAV_PREDICTOR_EXTERNAL = 4,
} SogmnavPredictor;

/**
 * Result code of every fallible call.
 */
typedef enum SogmnavStatus {
  SOGMNAV_STATUS_OK = 0,
  SOGMNAV_STATUS_INVALID_INPUT = 1,
  SOGMNAV_STATUS_OUT_OF_RANGE = 2,
  SOGMNAV_STATUS_EMPTY_MAP = 3,
  SOGMNAV_STATUS_DIVERGENCE = 4,
  SOGMNAV_STATUS_FRAME = 5,
  SOGMNAV_STATUS_FORMAT = 6,
  SOGMNAV_STATUS_STALE = 7,
  SOGMNAV_STATUS_UNREACHABLE = 8,
  SOGMNAV_STATUS_OPTIMIZATION = 9,
  SOGMNAV_STATUS_CONFIG = 10,
  SOGMNAV_STATUS_IO = 11,
  SOGMNAV_STATUS_NULL_POINTER = 12,
  SOGMNAV_STATUS_PANIC = 13,
} SogmnavStatus;

/**
 * Experiment configuration.
 */
typedef struct SogmnavConfig SogmnavConfig;

/**
 * Recorded simulation session.
 */
typedef struct SogmnavLog SogmnavLog;

/**
 * Spatiotemporal risk map.
 */
typedef struct SogmnavSrm SogmnavSrm;

/**
 * Simulated world.
 */
typedef struct SogmnavWorld SogmnavWorld;

/**
 * Session summary. Percentages are in percent.
 */
typedef struct SogmnavMetrics {
  double t_f;
  bool complete;
  double collision_pct;
  double risk_pct;
  double aas;
  double slow_pct;
  double als;
  double backward_pct;
} SogmnavMetrics;

/**
 * Risk value and gradient at one query point.
 */
typedef struct SogmnavRiskSample {
  double static_value;
  double static_grad[2];
  double dynamic_value;
  double dynamic_grad[2];
  bool clamped;
} SogmnavRiskSample;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *sogmnav_last_error_message(void);

void sogmnav_clear_last_error(void);

/**
 * Library version, a static nul-terminated string.
 */
const char *sogmnav_version(void);

/**
 * # Safety
 * `out` must be valid for writes.
 */
enum SogmnavStatus sogmnav_config_default(struct SogmnavConfig **out_config);

/**
 * Parses a TOML configuration. Unknown keys and invalid values fail with
 * `Config`.
 *
 * # Safety
 * `toml` must be a nul-terminated string; `out_config` valid for writes.
 */
enum SogmnavStatus sogmnav_config_from_toml(const char *toml, struct SogmnavConfig **out_config);

/**
 * # Safety
 * `config` must come from this library and not be used afterwards.
 */
void sogmnav_config_free(struct SogmnavConfig *config);

/**
 * The bundled atrium.
 *
 * # Safety
 * `out_world` must be valid for writes.
 */
enum SogmnavStatus sogmnav_world_atrium(struct SogmnavWorld **out_world);

/**
 * Parses a world description in the text format read by the CLI.
 *
 * # Safety
 * `description` must be a nul-terminated string; `out_world` valid for writes.
 */
enum SogmnavStatus sogmnav_world_parse(const char *description, struct SogmnavWorld **out_world);

/**
 * # Safety
 * `world` must come from this library and not be used afterwards.
 */
void sogmnav_world_free(struct SogmnavWorld *world);

/**
 * Simulates one closed-loop session.
 *
 * # Safety
 * Handles must be live; `out_log` valid for writes.
 */
enum SogmnavStatus sogmnav_run_session(const struct SogmnavWorld *world,
                                       const struct SogmnavConfig *config,
                                       enum SogmnavPredictor predictor,
                                       uint64_t seed,
                                       struct SogmnavLog **out_log);

/**
 * # Safety
 * `path` must be a nul-terminated string; `out_log` valid for writes.
 */
enum SogmnavStatus sogmnav_log_load(const char *path, struct SogmnavLog **out_log);

/**
 * # Safety
 * `log` must be live; `path` a nul-terminated string.
 */
enum SogmnavStatus sogmnav_log_save(const struct SogmnavLog *log, const char *path);

/**
 * Number of recorded ticks, 0 for a null handle.
 *
 * # Safety
 * `log` must be live or null.
 */
size_t sogmnav_log_tick_count(const struct SogmnavLog *log);

/**
 * # Safety
 * `log` must be live; `out_metrics` valid for writes.
 */
enum SogmnavStatus sogmnav_log_metrics(const struct SogmnavLog *log,
                                       struct SogmnavMetrics *out_metrics);

/**
 * # Safety
 * `log` must come from this library and not be used afterwards.
 */
void sogmnav_log_free(struct SogmnavLog *log);

/**
 * Reads a `.sogm` grid file and converts it to a risk map with the
 * configuration's risk parameters.
 *
 * # Safety
 * `path` must be a nul-terminated string; `config` live; `out_srm` valid for
 * writes.
 */
enum SogmnavStatus sogmnav_srm_from_sogm_file(const char *path,
                                              const struct SogmnavConfig *config,
                                              struct SogmnavSrm **out_srm);

/**
 * Risk at `(x, y)` and time `t`. Queries outside the grid are clamped to its
 * border and flagged.
 *
 * # Safety
 * `srm` must be live; `out_sample` valid for writes.
 */
enum SogmnavStatus sogmnav_srm_sample(const struct SogmnavSrm *srm,
                                      double x,
                                      double y,
                                      double t,
                                      struct SogmnavRiskSample *out_sample);

/**
 * # Safety
 * `srm` must come from this library and not be used afterwards.
 */
void sogmnav_srm_free(struct SogmnavSrm *srm);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOGMNAV_H */
