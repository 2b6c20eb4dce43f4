/* Row-wise GRU gate math; kept in plain C so the loops vectorize. */
#ifndef DASEL_GRU_ROWS_H
#define DASEL_GRU_ROWS_H

#include <math.h>

static inline void gru_row_forward(int H, const double *restrict gx,
                                   const double *restrict gh,
                                   const double *restrict hp,
                                   double *restrict hout, double *restrict z,
                                   double *restrict r, double *restrict n,
                                   double *restrict ghn)
{
    int j;
    for (j = 0; j < H; ++j) {
        double zv = 1.0 / (1.0 + exp(-(gx[j] + gh[j])));
        double rv = 1.0 / (1.0 + exp(-(gx[H + j] + gh[H + j])));
        double g = gh[2 * H + j];
        double nv = tanh(gx[2 * H + j] + rv * g);
        hout[j] = (1.0 - zv) * hp[j] + zv * nv;
        z[j] = zv;
        r[j] = rv;
        n[j] = nv;
        ghn[j] = g;
    }
}

static inline void gru_row_forward_nocache(int H, const double *restrict gx,
                                           const double *restrict gh,
                                           const double *restrict hp,
                                           double *restrict hout)
{
    int j;
    for (j = 0; j < H; ++j) {
        double zv = 1.0 / (1.0 + exp(-(gx[j] + gh[j])));
        double rv = 1.0 / (1.0 + exp(-(gx[H + j] + gh[H + j])));
        double nv = tanh(gx[2 * H + j] + rv * gh[2 * H + j]);
        hout[j] = (1.0 - zv) * hp[j] + zv * nv;
    }
}

/* dh: gradient w.r.t. the state after this step (already summed).
   Writes gate gradients and the direct part of the carry into hp_grad. */
static inline void gru_row_backward(int H, const double *restrict dh,
                                    const double *restrict hp,
                                    const double *restrict z,
                                    const double *restrict r,
                                    const double *restrict n,
                                    const double *restrict ghn,
                                    double *restrict dgx, double *restrict dgh,
                                    double *restrict hp_grad)
{
    int j;
    for (j = 0; j < H; ++j) {
        double d = dh[j];
        double zv = z[j], rv = r[j], nv = n[j];
        double dan = d * zv * (1.0 - nv * nv);
        double dar = dan * ghn[j] * rv * (1.0 - rv);
        double daz = d * (nv - hp[j]) * zv * (1.0 - zv);
        dgx[j] = daz;
        dgx[H + j] = dar;
        dgx[2 * H + j] = dan;
        dgh[j] = daz;
        dgh[H + j] = dar;
        dgh[2 * H + j] = dan * rv;
        hp_grad[j] = d * (1.0 - zv);
    }
}

#endif
