#include <math.h>
#include <stdio.h>
#include "bsccs.h"

/* Two-era toy subject: one event in the exposed day, none in the unexposed day. */
int main(void) {
    size_t subject_offsets[] = {0, 2};
    int64_t lengths[] = {1, 1};
    uint32_t events[] = {1, 0};
    size_t exposure_offsets[] = {0, 1, 1};
    uint32_t exposures[] = {0};
    BsccsDataset *ds = NULL;
    if (bsccs_dataset_from_arrays(1, subject_offsets, 2, lengths, events, exposure_offsets,
                                  exposures, 1, &ds) != BSCCS_STATUS_OK) {
        fprintf(stderr, "dataset: %s\n", bsccs_last_error_message());
        return 1;
    }
    BsccsFitOptions opts;
    bsccs_fit_options_default(&opts);
    BsccsFit *fit = NULL;
    if (bsccs_fit(ds, &opts, NULL, &fit) != BSCCS_STATUS_OK) {
        fprintf(stderr, "fit: %s\n", bsccs_last_error_message());
        return 1;
    }
    double beta = 0.0;
    if (bsccs_fit_coefficients(fit, &beta, 1) != BSCCS_STATUS_OK || fabs(beta - 0.401) > 1e-3) {
        fprintf(stderr, "beta %f\n", beta);
        return 1;
    }
    printf("%.6f\n", beta);
    bsccs_fit_free(fit);
    bsccs_dataset_free(ds);
    return 0;
}
