#include <math.h>
#include <stdio.h>
#include <string.h>

#include "qdecay.h"

#define CHECK(cond)                                          \
    do {                                                     \
        if (!(cond)) {                                       \
            fprintf(stderr, "failed: %s (line %d)\n", #cond, \
                    __LINE__);                               \
            return 1;                                        \
        }                                                    \
    } while (0)

int main(void) {
    CHECK(strlen(qd_version()) > 0);

    QdPotential *shell = NULL;
    CHECK(qd_potential_delta_shell(-1.0, 1.0, &shell) == QD_STATUS_OK);
    double f0 = 1.0;
    CHECK(qd_jost_at_zero(shell, &f0) == QD_STATUS_OK);
    CHECK(fabs(f0) < 1e-12);
    qd_potential_free(shell);

    QdPotential *bad = NULL;
    CHECK(qd_potential_delta_shell(1.0, -1.0, &bad) == QD_STATUS_DOMAIN);
    CHECK(bad == NULL);
    char msg[256];
    CHECK(qd_last_error(msg, sizeof msg) > 0);

    double times[12], values[12];
    for (int i = 0; i < 12; ++i) {
        times[i] = pow(10.0, 1.0 + i / 8.0);
        values[i] = 3.0 * pow(times[i], -3.0);
    }
    QdFit fit;
    CHECK(qd_fit_exponent(times, values, 12, 0.0, 0.0, &fit) == QD_STATUS_OK);
    CHECK(fabs(fit.exponent + 3.0) < 1e-10);
    puts("ok");
    return 0;
}
