/* C interface to the mfbf barrier-function library. */

#ifndef MFBF_H
#define MFBF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by fallible functions.
 */
typedef enum MfbfStatus {
  MFBF_STATUS_OK = 0,
  MFBF_STATUS_NULL_ARGUMENT = 1,
  MFBF_STATUS_INVALID_ARGUMENT = 2,
  MFBF_STATUS_BOUNDS_VIOLATION = 3,
  MFBF_STATUS_IO_ERROR = 4,
  MFBF_STATUS_PARSE_ERROR = 5,
} MfbfStatus;

/**
 * Opaque joint action set handle.
 */
typedef struct MfbfActionSet MfbfActionSet;

/**
 * Opaque barrier-function handle.
 */
typedef struct MfbfBarrier MfbfBarrier;

/**
 * Opaque two-vehicle plant handle.
 */
typedef struct MfbfPlant MfbfPlant;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent error on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *mfbf_last_error(void);

/**
 * Create a plant; returns null if the parameters are inconsistent.
 */
struct MfbfPlant *mfbf_plant_new(double dt,
                                 double v_min,
                                 double v_max,
                                 double omega_max,
                                 double zeta_max);

/**
 * # Safety
 * `plant` must be a pointer returned by [`mfbf_plant_new`], not yet freed.
 */
void mfbf_plant_free(struct MfbfPlant *plant);

/**
 * Step the plant once. Rejects out-of-bounds controls.
 *
 * # Safety
 * `plant` must be valid; `state` must point to 8 readable doubles,
 * `control` to 6, and `next` to 8 writable doubles.
 */
enum MfbfStatus mfbf_plant_step(const struct MfbfPlant *plant,
                                const double *state,
                                const double *control,
                                double *next);

/**
 * Build the joint action set from per-vehicle turn-rate choices with
 * fixed speed and climb rate. Returns null on bounds violations or an
 * empty choice list.
 *
 * # Safety
 * `plant` must be valid; `omegas` must point to `n_omegas` doubles.
 */
struct MfbfActionSet *mfbf_action_set_new(const struct MfbfPlant *plant,
                                          const double *omegas,
                                          size_t n_omegas,
                                          double v_fixed,
                                          double zeta_fixed);

/**
 * # Safety
 * `set` must be a pointer returned by [`mfbf_action_set_new`], not yet
 * freed.
 */
void mfbf_action_set_free(struct MfbfActionSet *set);

/**
 * Number of joint actions in the set.
 *
 * # Safety
 * `set` must be valid.
 */
size_t mfbf_action_set_len(const struct MfbfActionSet *set);

/**
 * Copy action `index` into `control_out`.
 *
 * # Safety
 * `set` must be valid and `control_out` must point to 6 writable doubles.
 */
enum MfbfStatus mfbf_action_set_get(const struct MfbfActionSet *set,
                                    size_t index,
                                    double *control_out);

/**
 * Exact rollout barrier under the hold-heading maneuver. `clip <= 0`
 * disables the upper clip.
 *
 * # Safety
 * `plant` must be valid.
 */
struct MfbfBarrier *mfbf_barrier_straight(const struct MfbfPlant *plant,
                                          double ds,
                                          double clip,
                                          size_t horizon,
                                          double v,
                                          double zeta);

/**
 * Exact rollout barrier under the shared-turn maneuver.
 *
 * # Safety
 * `plant` must be valid.
 */
struct MfbfBarrier *mfbf_barrier_turn(const struct MfbfPlant *plant,
                                      double ds,
                                      double clip,
                                      size_t horizon,
                                      double eta,
                                      double v,
                                      double omega);

/**
 * Learned barrier from a model checkpoint, with one-step changes
 * evaluated through the plant.
 *
 * # Safety
 * `plant` must be valid and `checkpoint_path` must be a NUL-terminated
 * UTF-8 path.
 */
struct MfbfBarrier *mfbf_barrier_load(const struct MfbfPlant *plant,
                                      const char *checkpoint_path,
                                      double n_sigma,
                                      size_t mc_samples);

/**
 * Pointwise maximum of two barriers; the inputs remain usable and must
 * still be freed by the caller.
 *
 * # Safety
 * Both handles must be valid.
 */
struct MfbfBarrier *mfbf_barrier_max(const struct MfbfBarrier *first,
                                     const struct MfbfBarrier *second);

/**
 * # Safety
 * `barrier` must be a pointer returned by a barrier constructor, not yet
 * freed.
 */
void mfbf_barrier_free(struct MfbfBarrier *barrier);

/**
 * Barrier value at a state.
 *
 * # Safety
 * `barrier` must be valid, `state` must point to 8 doubles, `out` to one
 * writable double.
 */
enum MfbfStatus mfbf_barrier_value(const struct MfbfBarrier *barrier,
                                   const double *state,
                                   double *out);

/**
 * One-step barrier change for a control.
 *
 * # Safety
 * `barrier` must be valid, `state` must point to 8 doubles, `control` to
 * 6, `out` to one writable double.
 */
enum MfbfStatus mfbf_barrier_delta(const struct MfbfBarrier *barrier,
                                   const double *state,
                                   const double *control,
                                   double *out);

/**
 * Project a nominal control onto the barrier's admissible subset of the
 * action set: the closest admissible action wins, ties break to the
 * smallest index, and when nothing is admissible the max-slack action is
 * returned with `*feasible = 0`.
 *
 * # Safety
 * All handles must be valid; `state` points to 8 doubles, `nominal` to
 * 6, `chosen` to 6 writable doubles; `index`, `overridden`, `feasible`
 * must be writable.
 */
enum MfbfStatus mfbf_filter_apply(const struct MfbfBarrier *barrier,
                                  const struct MfbfActionSet *actions,
                                  double lambda,
                                  const double *state,
                                  const double *nominal,
                                  double *chosen,
                                  size_t *index,
                                  int32_t *overridden,
                                  int32_t *feasible);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MFBF_H */
