/* Register-tiled direct convolution micro-kernels (float64, NCHW).
 *
 * Inputs are pre-padded so every tile reads in-bounds; weights are packed as
 * (O/OB, C, K, K, OB). Accumulation order is fixed, so results are
 * bit-reproducible for a given build.
 */
#ifndef HOLOFORGE_CONV_TILE_H
#define HOLOFORGE_CONV_TILE_H

#include <stddef.h>
#include <string.h>

typedef double hf_v8 __attribute__((vector_size(64)));

static inline hf_v8 hf_load(const double *p)
{
    hf_v8 v;
    memcpy(&v, p, sizeof v);
    return v;
}

#define HF_OB 4
#define HF_XB 16

static void hf_conv_fwd(const double *restrict xp, ptrdiff_t N, ptrdiff_t C,
                        ptrdiff_t Hp, ptrdiff_t Wp, const double *restrict wb,
                        const double *restrict bias, ptrdiff_t nob, ptrdiff_t K,
                        ptrdiff_t H, ptrdiff_t Wt, double *restrict out)
{
    for (ptrdiff_t n = 0; n < N; ++n)
    for (ptrdiff_t ob = 0; ob < nob; ++ob)
    for (ptrdiff_t y = 0; y < H; ++y)
    for (ptrdiff_t x0 = 0; x0 < Wt; x0 += HF_XB) {
        hf_v8 a0[HF_OB], a1[HF_OB];
        for (int j = 0; j < HF_OB; ++j) {
            const double b = bias[ob * HF_OB + j];
            a0[j] = (hf_v8){b, b, b, b, b, b, b, b};
            a1[j] = a0[j];
        }
        for (ptrdiff_t c = 0; c < C; ++c)
        for (ptrdiff_t ky = 0; ky < K; ++ky) {
            const double *xr = xp + ((n * C + c) * Hp + y + ky) * Wp + x0;
            const double *wr = wb + ((ob * C + c) * K + ky) * K * HF_OB;
            for (ptrdiff_t kx = 0; kx < K; ++kx) {
                const hf_v8 x0v = hf_load(xr + kx);
                const hf_v8 x1v = hf_load(xr + kx + 8);
                const double *ws = wr + kx * HF_OB;
                for (int j = 0; j < HF_OB; ++j) {
                    a0[j] += ws[j] * x0v;
                    a1[j] += ws[j] * x1v;
                }
            }
        }
        for (int j = 0; j < HF_OB; ++j) {
            double *orow = out + ((n * nob * HF_OB + ob * HF_OB + j) * H + y) * Wt + x0;
            memcpy(orow, &a0[j], sizeof(hf_v8));
            memcpy(orow + 8, &a1[j], sizeof(hf_v8));
        }
    }
}

/* gw[o, c, ky, kx] = sum_{n,y,x} g[n, o, y, x] * xp[n, c, y + ky, x + kx];
 * g is (N, nob*OB, H, Wt) zero-padded outside the true extent. */
static void hf_conv_bwd_weight(const double *restrict xp, const double *restrict g,
                               ptrdiff_t N, ptrdiff_t C, ptrdiff_t Hp, ptrdiff_t Wp,
                               ptrdiff_t nob, ptrdiff_t K, ptrdiff_t H, ptrdiff_t Wt,
                               double *restrict gw)
{
    const ptrdiff_t O = nob * HF_OB;
    for (ptrdiff_t ob = 0; ob < nob; ++ob)
    for (ptrdiff_t c = 0; c < C; ++c)
    for (ptrdiff_t ky = 0; ky < K; ++ky)
    for (ptrdiff_t kx = 0; kx < K; ++kx) {
        hf_v8 a0[HF_OB], a1[HF_OB];
        for (int j = 0; j < HF_OB; ++j) {
            a0[j] = (hf_v8){0};
            a1[j] = (hf_v8){0};
        }
        for (ptrdiff_t n = 0; n < N; ++n)
        for (ptrdiff_t y = 0; y < H; ++y) {
            const double *xr = xp + ((n * C + c) * Hp + y + ky) * Wp + kx;
            const double *gr = g + ((n * O + ob * HF_OB) * H + y) * Wt;
            for (ptrdiff_t x0 = 0; x0 < Wt; x0 += HF_XB) {
                const hf_v8 x0v = hf_load(xr + x0);
                const hf_v8 x1v = hf_load(xr + x0 + 8);
                for (int j = 0; j < HF_OB; ++j) {
                    a0[j] += hf_load(gr + j * H * Wt + x0) * x0v;
                    a1[j] += hf_load(gr + j * H * Wt + x0 + 8) * x1v;
                }
            }
        }
        for (int j = 0; j < HF_OB; ++j) {
            const hf_v8 t = a0[j] + a1[j];
            double s = 0.0;
            for (int i = 0; i < 8; ++i)
                s += t[i];
            gw[(((ob * HF_OB + j) * C + c) * K + ky) * K + kx] = s;
        }
    }
}

/* 3x3 specialization: one gradient-row load feeds all three horizontal taps. */
static void hf_conv_bwd_weight3(const double *restrict xp, const double *restrict g,
                                ptrdiff_t N, ptrdiff_t C, ptrdiff_t Hp, ptrdiff_t Wp,
                                ptrdiff_t nob, ptrdiff_t H, ptrdiff_t Wt,
                                double *restrict gw)
{
    const ptrdiff_t O = nob * HF_OB;
    for (ptrdiff_t ob = 0; ob < nob; ++ob)
    for (ptrdiff_t c = 0; c < C; ++c)
    for (ptrdiff_t ky = 0; ky < 3; ++ky) {
        hf_v8 a[3][HF_OB];
        for (int k = 0; k < 3; ++k)
            for (int j = 0; j < HF_OB; ++j)
                a[k][j] = (hf_v8){0};
        for (ptrdiff_t n = 0; n < N; ++n)
        for (ptrdiff_t y = 0; y < H; ++y) {
            const double *xr = xp + ((n * C + c) * Hp + y + ky) * Wp;
            const double *gr = g + ((n * O + ob * HF_OB) * H + y) * Wt;
            for (ptrdiff_t x0 = 0; x0 < Wt; x0 += 8) {
                hf_v8 gv[HF_OB];
                for (int j = 0; j < HF_OB; ++j)
                    gv[j] = hf_load(gr + j * H * Wt + x0);
                for (int k = 0; k < 3; ++k) {
                    const hf_v8 xv = hf_load(xr + x0 + k);
                    for (int j = 0; j < HF_OB; ++j)
                        a[k][j] += gv[j] * xv;
                }
            }
        }
        for (int k = 0; k < 3; ++k)
        for (int j = 0; j < HF_OB; ++j) {
            double s = 0.0;
            for (int i = 0; i < 8; ++i)
                s += a[k][j][i];
            gw[(((ob * HF_OB + j) * C + c) * 3 + ky) * 3 + k] = s;
        }
    }
}

#endif
