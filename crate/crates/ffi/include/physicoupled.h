#ifndef PHYSICOUPLED_H
#define PHYSICOUPLED_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum PcStatus {
  PC_STATUS_OK = 0,
  PC_STATUS_NULL_POINTER = 1,
  /**
   * Bad configuration, shape or contract violation.
   */
  PC_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Simulation parameters violate the CFL bound.
   */
  PC_STATUS_UNSTABLE = 3,
  /**
   * Non-finite values, solver or training failure.
   */
  PC_STATUS_NUMERICS = 4,
  PC_STATUS_IO = 5,
  /**
   * Malformed file contents.
   */
  PC_STATUS_FORMAT = 6,
  /**
   * The recovered PDE cannot be stepped.
   */
  PC_STATUS_DEGENERATE_PDE = 7,
  /**
   * Output buffer too small.
   */
  PC_STATUS_BUFFER_TOO_SMALL = 8,
  /**
   * A Rust panic was caught at the boundary.
   */
  PC_STATUS_INTERNAL = 9,
} PcStatus;

/**
 * A trained forecaster together with the physics backend it rolls out with.
 */
typedef struct PcModel PcModel;

/**
 * A gridded time series `[frames, height, width]`.
 */
typedef struct PcSequence PcSequence;

/**
 * Parameters of the reflected-wave simulator.
 */
typedef struct PcWaveConfig {
  size_t height;
  size_t width;
  double dt;
  double dx;
  double dy;
  double speed;
  double amplitude;
  double sigma2_x;
  double sigma2_y;
  double center_i;
  double center_j;
  size_t steps;
  double noise_std;
  uint64_t seed;
} PcWaveConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Defaults of the simulator: 16x16 grid, dt 0.1, c 3, centered bump.
 */
struct PcWaveConfig pc_wave_config_default(void);

/**
 * Simulate one wave sequence into a new handle.
 *
 * # Safety
 * `config` must point to a valid `PcWaveConfig`; `out` to a writable
 * handle slot.
 */
enum PcStatus pc_wave_simulate(const struct PcWaveConfig *config, struct PcSequence **out);

/**
 * Wrap `frames * height * width` row-major values (all cells active).
 *
 * # Safety
 * `data` must hold `frames * height * width` doubles.
 */
enum PcStatus pc_sequence_new(size_t frames,
                              size_t height,
                              size_t width,
                              const double *data,
                              double dt,
                              struct PcSequence **out);

/**
 * Read a sequence directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` a writable handle slot.
 */
enum PcStatus pc_sequence_read(const char *dir, struct PcSequence **out);

/**
 * Write a sequence directory with `f64` samples.
 *
 * # Safety
 * `seq` must be a live handle; `dir` a NUL-terminated string.
 */
enum PcStatus pc_sequence_write(const struct PcSequence *seq, const char *dir);

/**
 * Dimensions of a sequence. Any output pointer may be null.
 *
 * # Safety
 * `seq` must be a live handle; non-null outputs must be writable.
 */
enum PcStatus pc_sequence_dims(const struct PcSequence *seq,
                               size_t *frames,
                               size_t *height,
                               size_t *width);

/**
 * Copy all values into `buf` (row-major `[frames, height, width]`).
 *
 * # Safety
 * `seq` must be a live handle; `buf` must hold `len` doubles.
 */
enum PcStatus pc_sequence_copy(const struct PcSequence *seq, double *buf, size_t len);

/**
 * # Safety
 * `seq` must be null or a handle not yet freed.
 */
void pc_sequence_free(struct PcSequence *seq);

/**
 * Load a forecaster checkpoint. `physics` is `none`, `pde:<path>`,
 * `ode:<path>`, `truth-wave`, or null for the backend stored in the
 * checkpoint. `speed`, `dx`, `dy` parameterize the physics backend.
 *
 * # Safety
 * `dir` and non-null `physics` must be NUL-terminated strings; `out` a
 * writable handle slot.
 */
enum PcStatus pc_model_load(const char *dir,
                            const char *physics,
                            double speed,
                            double dx,
                            double dy,
                            struct PcModel **out);

/**
 * Roll the model over `seq`: teacher-forced for `tf_steps` frames, then
 * closed loop for `horizon` steps. Frame `k` of the result forecasts time
 * `k + 1` of the input.
 *
 * # Safety
 * `model` and `seq` must be live handles; `out` a writable handle slot.
 */
enum PcStatus pc_model_rollout(const struct PcModel *model,
                               const struct PcSequence *seq,
                               size_t tf_steps,
                               size_t horizon,
                               struct PcSequence **out);

/**
 * Step at which a rollout's physics backend failed, or -1 if it never did
 * (or `seq` is not a rollout result).
 *
 * # Safety
 * `seq` must be a live handle.
 */
int64_t pc_sequence_physics_fallback(const struct PcSequence *seq);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void pc_model_free(struct PcModel *model);

/**
 * `sqrt(1 - |a.b| / (|a||b|))` for two coefficient vectors of length `n`.
 *
 * # Safety
 * `a` and `b` must hold `n` doubles; `out` must be writable.
 */
enum PcStatus pc_pde_error(const double *a, const double *b, size_t n, double *out);

/**
 * Copy the calling thread's last error message (NUL-terminated, possibly
 * truncated) into `buf` and return its full length in bytes excluding the
 * terminator. Pass a null `buf` to query the length.
 *
 * # Safety
 * Non-null `buf` must hold `len` bytes.
 */
size_t pc_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pc_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHYSICOUPLED_H */
