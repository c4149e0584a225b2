/* Minimal consumer of the fwnucl C ABI: train a tiny model on the
 * built-in synthetic set, attack one image, print the outcome.
 *
 * Build (from the workspace root, after `cargo build -p fwnucl-ffi`):
 *   cc crates/fwnucl-ffi/examples/c/smoke.c \
 *      -Icrates/fwnucl-ffi/include \
 *      -Ltarget/debug -l:libfwnucl_ffi.a -lpthread -ldl -lm -o smoke
 */
#include <stdio.h>
#include <stdlib.h>
#include "fwnucl.h"

static void die(const char *what) {
    char *msg = fwnucl_last_error();
    fprintf(stderr, "%s failed: %s\n", what, msg ? msg : "(no message)");
    fwnucl_string_free(msg);
    exit(1);
}

int main(void) {
    printf("fwnucl %s\n", fwnucl_version());

    FwnuclModel *model = NULL;
    if (fwnucl_model_train_synth("linear", 7, 80, 1, 8, 8, 30, 0.3, 1, &model)
        != FwnuclStatus_Ok) die("train");

    uintptr_t c, h, w;
    fwnucl_model_input_shape(model, &c, &h, &w);
    uintptr_t len = c * h * w;

    /* A flat mid-gray probe image. */
    double *pixels = malloc(len * sizeof(double));
    for (uintptr_t i = 0; i < len; i++) pixels[i] = 0.5;
    uintptr_t label;
    if (fwnucl_model_predict(model, pixels, len, &label) != FwnuclStatus_Ok)
        die("predict");

    FwnuclAttackParams params = {
        .attack = FwnuclAttackKind_Fw,
        .ball = FwnuclBallKind_Nuclear,
        .eps = 2.0,
        .q = 1.0,
        .per_channel = false,
        .steps = 10,
        .step_size = 0.02,
        .rule = FwnuclStepRule_Harmonic,
        .lipschitz = 1.0,
        .random_start = false,
        .clamp_final = true,
        .seed = 3,
        .targeted = -1,
    };
    double *x_adv = malloc(len * sizeof(double));
    FwnuclAttackStats stats;
    if (fwnucl_attack_run(model, pixels, len, label, &params, x_adv, &stats)
        != FwnuclStatus_Ok) die("attack");

    printf("label %zu -> success=%d l2=%.4f nuclear=%.4f nonzero=%llu\n",
           (size_t)label, (int)stats.success, stats.l2, stats.nuclear,
           (unsigned long long)stats.nonzero_pixels);

    free(x_adv);
    free(pixels);
    fwnucl_model_free(model);
    return 0;
}
