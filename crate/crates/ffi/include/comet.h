#ifndef COMET_H
#define COMET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CometStatus {
  COMET_STATUS_OK = 0,
  COMET_STATUS_NULL_POINTER = 1,
  COMET_STATUS_INVALID_ARGUMENT = 2,
  COMET_STATUS_SHAPE = 3,
  COMET_STATUS_INDEX = 4,
  COMET_STATUS_IO = 5,
  COMET_STATUS_LOAD = 6,
  COMET_STATUS_TRAINING = 7,
  COMET_STATUS_SIMULATION = 8,
  COMET_STATUS_CONFIG = 9,
  COMET_STATUS_PANIC = 10,
} CometStatus;

/**
 * Confidence networks used to pick a (mechanism, context) pair.
 */
typedef struct CometConfidenceBank CometConfidenceBank;

/**
 * Trained or freshly initialized mechanism bank.
 */
typedef struct CometMechanismBank CometMechanismBank;

/**
 * A simulator instance: environment plus its current state.
 */
typedef struct CometWorld CometWorld;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *comet_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *comet_version(void);

/**
 * New bank of `m` mechanisms `2d -> hidden... -> d`.
 */
enum CometStatus comet_bank_new(size_t m,
                                size_t d,
                                const size_t *hidden,
                                size_t hidden_len,
                                uint64_t seed,
                                struct CometMechanismBank **out);

/**
 * Loads a bank from a `CMT1` checkpoint.
 */
enum CometStatus comet_bank_load(const char *path, struct CometMechanismBank **out);

enum CometStatus comet_bank_save(const struct CometMechanismBank *bank, const char *path);

void comet_bank_free(struct CometMechanismBank *bank);

/**
 * Writes the mechanism count and state dimension.
 */
enum CometStatus comet_bank_shape(const struct CometMechanismBank *bank, size_t *m, size_t *d);

/**
 * `delta = f_m([z_i ; z_j])`, all three arrays of length `d`.
 */
enum CometStatus comet_bank_predict_delta(const struct CometMechanismBank *bank,
                                          size_t m,
                                          const double *zi,
                                          const double *zj,
                                          size_t d,
                                          double *delta);

/**
 * Windowed pair losses of a `(horizon + 1) x k x d` window into
 * `loss[k * M * k]`, ordered (object, mechanism, context).
 */
enum CometStatus comet_bank_pair_loss(const struct CometMechanismBank *bank,
                                      const double *states,
                                      size_t horizon,
                                      size_t k,
                                      double *loss,
                                      size_t loss_len);

/**
 * Arg-min `(mechanism, context)` per object of a `k x m x k` loss tensor;
 * ties go to the smallest mechanism, then the smallest context.
 */
enum CometStatus comet_select_winners(const double *loss,
                                      size_t k,
                                      size_t m,
                                      size_t *mechanism,
                                      size_t *context);

enum CometStatus comet_confidence_new(size_t m,
                                      size_t d,
                                      const size_t *hidden,
                                      size_t hidden_len,
                                      uint64_t seed,
                                      struct CometConfidenceBank **out);

enum CometStatus comet_confidence_load(const char *path, struct CometConfidenceBank **out);

void comet_confidence_free(struct CometConfidenceBank *conf);

/**
 * Highest-scoring `(mechanism, context)` for object `i` of a `k x d` scene.
 */
enum CometStatus comet_confidence_select_pair(const struct CometConfidenceBank *conf,
                                              const double *states,
                                              size_t k,
                                              size_t i,
                                              size_t *mechanism,
                                              size_t *context);

/**
 * Simulator for a built-in environment, initialized from `seed`.
 */
enum CometStatus comet_world_new(const char *env_id, uint64_t seed, struct CometWorld **out);

void comet_world_free(struct CometWorld *world);

/**
 * Writes the object count `k` and state dimension `d`.
 */
enum CometStatus comet_world_shape(const struct CometWorld *world, size_t *k, size_t *d);

/**
 * Copies the current `k x d` state into `out`.
 */
enum CometStatus comet_world_state(const struct CometWorld *world, double *out, size_t len);

/**
 * Advances one step; writes each object's mode code and context index
 * (arrays of length `k`, either may be null).
 */
enum CometStatus comet_world_step(struct CometWorld *world, int32_t *modes, size_t *contexts);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COMET_H */
