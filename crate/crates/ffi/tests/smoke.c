#include <stdio.h>
#include "kdgm.h"

int main(void) {
    char msg[256];
    KdgmModel *model = NULL;
    if (kdgm_model_load("/nonexistent/model.kdgm", &model) != KDGM_STATUS_IO || model != NULL)
        return 1;
    if (kdgm_last_error(msg, sizeof msg) == 0)
        return 2;

    double price = kdgm_bs_price(1.0, 1.0, 0.25, 1.0, KDGM_OPTION_KIND_CALL);
    printf("%.10f\n", price);
    return 0;
}
