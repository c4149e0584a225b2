#pragma once

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum FwnuclStatus {
  FwnuclStatus_Ok = 0,
  FwnuclStatus_NullArgument = 1,
  FwnuclStatus_InvalidArgument = 2,
  FwnuclStatus_IoError = 3,
  FwnuclStatus_RuntimeError = 4,
} FwnuclStatus;

/**
 * Attack family selector.
 */
typedef enum FwnuclAttackKind {
  FwnuclAttackKind_Fgsm = 0,
  FwnuclAttackKind_Pgd = 1,
  FwnuclAttackKind_PgdNucl = 2,
  FwnuclAttackKind_Fw = 3,
} FwnuclAttackKind;

/**
 * Distortion-set selector. `SchattenQ` reads the `q` field;
 * `GroupPerChannel` builds one full-frame group per channel.
 */
typedef enum FwnuclBallKind {
  FwnuclBallKind_Linf = 0,
  FwnuclBallKind_L1 = 1,
  FwnuclBallKind_L2 = 2,
  FwnuclBallKind_Nuclear = 3,
  FwnuclBallKind_SchattenQ = 4,
  FwnuclBallKind_GroupPerChannel = 5,
} FwnuclBallKind;

typedef enum FwnuclStepRule {
  FwnuclStepRule_Harmonic = 0,
  FwnuclStepRule_ShortStep = 1,
  FwnuclStepRule_Backtracking = 2,
} FwnuclStepRule;

/**
 * Opaque classifier handle.
 */
typedef struct FwnuclModel FwnuclModel;

/**
 * Flat attack configuration; `q` is the Schatten exponent (<= 0 means
 * infinity), `lipschitz` feeds the short-step rule, `targeted` < 0 runs
 * the untargeted loss.
 */
typedef struct FwnuclAttackParams {
  enum FwnuclAttackKind attack;
  enum FwnuclBallKind ball;
  double eps;
  double q;
  bool per_channel;
  uint32_t steps;
  double step_size;
  enum FwnuclStepRule rule;
  double lipschitz;
  bool random_start;
  bool clamp_final;
  uint64_t seed;
  int64_t targeted;
} FwnuclAttackParams;

/**
 * Per-attack outcome for one image.
 */
typedef struct FwnuclAttackStats {
  bool success;
  double final_loss;
  double l2;
  double nuclear;
  double linf;
  uint64_t nonzero_pixels;
} FwnuclAttackStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; do not free.
 */
const char *fwnucl_version(void);

/**
 * Copy of the last error message on this thread, or NULL when none.
 * Free with `fwnucl_string_free`.
 */
char *fwnucl_last_error(void);

/**
 * # Safety
 * `s` must be a string returned by this library, not yet freed.
 */
void fwnucl_string_free(char *s);

/**
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` a valid pointer.
 */
enum FwnuclStatus fwnucl_model_load(const char *path, struct FwnuclModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` a valid NUL-terminated string.
 */
enum FwnuclStatus fwnucl_model_save(const struct FwnuclModel *model, const char *path);

/**
 * Train a classifier on the built-in synthetic two-class set. `kind` is
 * one of "linear", "mlp", "conv".
 *
 * # Safety
 * `kind` must be a valid NUL-terminated string; `out` a valid pointer.
 */
enum FwnuclStatus fwnucl_model_train_synth(const char *kind,
                                           uint64_t data_seed,
                                           uintptr_t n,
                                           uintptr_t channels,
                                           uintptr_t height,
                                           uintptr_t width,
                                           uintptr_t epochs,
                                           double lr,
                                           uint64_t train_seed,
                                           struct FwnuclModel **out);

/**
 * # Safety
 * `model` must be a handle from this library, not yet freed.
 */
void fwnucl_model_free(struct FwnuclModel *model);

/**
 * # Safety
 * `model` must be a live handle; out-pointers must be valid.
 */
enum FwnuclStatus fwnucl_model_input_shape(const struct FwnuclModel *model,
                                           uintptr_t *channels,
                                           uintptr_t *height,
                                           uintptr_t *width);

/**
 * # Safety
 * `model` must be a live handle; `out` a valid pointer.
 */
enum FwnuclStatus fwnucl_model_num_classes(const struct FwnuclModel *model, uintptr_t *out);

/**
 * # Safety
 * `model` must be a live handle; `pixels` must point to `len` doubles;
 * `out_label` must be valid.
 */
enum FwnuclStatus fwnucl_model_predict(const struct FwnuclModel *model,
                                       const double *pixels,
                                       uintptr_t len,
                                       uintptr_t *out_label);

/**
 * Run one attack on one image. `x_adv_out` receives the adversarial
 * image (same length as the input buffer); `stats_out` the outcome.
 *
 * # Safety
 * `model` must be a live handle; `pixels` and `x_adv_out` must point to
 * `len` doubles; `params` and `stats_out` must be valid.
 */
enum FwnuclStatus fwnucl_attack_run(const struct FwnuclModel *model,
                                    const double *pixels,
                                    uintptr_t len,
                                    uintptr_t true_label,
                                    const struct FwnuclAttackParams *params,
                                    double *x_adv_out,
                                    struct FwnuclAttackStats *stats_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus
