#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "dirac_mfp.h"

#define CHECK(call)                                                       \
    do {                                                                  \
        DmfpStatus s_ = (call);                                           \
        if (s_ != DMFP_STATUS_OK) {                                       \
            char msg_[256];                                               \
            dmfp_last_error_message(msg_, sizeof msg_);                   \
            fprintf(stderr, "%s failed (%d): %s\n", #call, (int)s_, msg_); \
            return 1;                                                     \
        }                                                                 \
    } while (0)

int main(void) {
    DmfpProfile *p = NULL;
    DmfpTerminal *m = NULL;
    DmfpFlow *f = NULL;
    DmfpSolveOptions o;
    DmfpSolveReport r;
    size_t nt, ny;

    CHECK(dmfp_profile_new(1.0, &p));
    CHECK(dmfp_terminal_self_similar(p, 1.0, 1e-3, &m));
    CHECK(dmfp_solve_options_default(&o));
    o.nt = 32;
    o.ny = 32;
    CHECK(dmfp_solve(p, m, &o, &f));
    CHECK(dmfp_flow_dims(f, &nt, &ny));
    CHECK(dmfp_flow_report(f, &r));

    double *left = malloc((nt + 1) * sizeof(double));
    double *right = malloc((nt + 1) * sizeof(double));
    CHECK(dmfp_flow_boundary(f, left, right, nt + 1));
    printf("version %s nt %zu ny %zu iterations %zu gamma_R(T) %.12f\n", dmfp_version(), nt, ny, r.iterations,
           right[nt]);
    int bad = fabs(right[nt] + left[nt]) > 1e-12 || !(right[nt] > 1.0);

    if (dmfp_flow_boundary(f, left, right, 2) != DMFP_STATUS_BUFFER_TOO_SMALL) bad = 1;
    if (dmfp_profile_new(-1.0, &p) != DMFP_STATUS_INVALID_PARAMETER || p != NULL) bad = 1;

    free(left);
    free(right);
    dmfp_flow_free(f);
    dmfp_terminal_free(m);
    dmfp_profile_free(p);
    return bad;
}
