"""Pure numpy GRU recurrence, interface-compatible with the compiled kernel."""

import numpy as np


def _sigmoid(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def forward(gx, U, bh, mask, keep_cache=True):
    T, B, G = gx.shape
    H = U.shape[0]
    if G != 3 * H or U.shape[1] != G or bh.shape[0] != G:
        raise ValueError("gate dimension mismatch")
    if mask.shape != (T, B):
        raise ValueError("mask shape mismatch")
    hs = np.zeros((T + 1, B, H))
    tc_len = T if keep_cache else 1
    z_c = np.zeros((tc_len, B, H))
    r_c = np.zeros((tc_len, B, H))
    n_c = np.zeros((tc_len, B, H))
    ghn_c = np.zeros((tc_len, B, H))
    active = mask.astype(bool)
    for t in range(T):
        h = hs[t]
        gh = h @ U
        gh += bh
        a = gx[t]
        zr = _sigmoid(a[:, : 2 * H] + gh[:, : 2 * H])
        z = zr[:, :H]
        r = zr[:, H:]
        ghn = gh[:, 2 * H :]
        n = np.tanh(a[:, 2 * H :] + r * ghn)
        h_new = (1.0 - z) * h + z * n
        m = active[t]
        hs[t + 1] = np.where(m[:, None], h_new, h)
        if keep_cache:
            mm = m[:, None]
            z_c[t] = np.where(mm, z, 0.0)
            r_c[t] = np.where(mm, r, 0.0)
            n_c[t] = np.where(mm, n, 0.0)
            ghn_c[t] = np.where(mm, ghn, 0.0)
    if keep_cache:
        return hs, z_c, r_c, n_c, ghn_c
    return hs, None, None, None, None


def backward(dout, hs, z, r, n, ghn, U, mask):
    T, B, H = dout.shape
    G = 3 * H
    dgx = np.zeros((T, B, G))
    dgh = np.zeros((T, B, G))
    carry = np.zeros((B, H))
    active = mask.astype(bool)
    for t in range(T - 1, -1, -1):
        dh = carry + dout[t]
        m = active[t][:, None]
        zt, rt, nt = z[t], r[t], n[t]
        dan = dh * zt * (1.0 - nt * nt)
        dar = dan * ghn[t] * rt * (1.0 - rt)
        daz = dh * (nt - hs[t]) * zt * (1.0 - zt)
        daz = np.where(m, daz, 0.0)
        dar = np.where(m, dar, 0.0)
        dan = np.where(m, dan, 0.0)
        dgx[t, :, :H] = daz
        dgx[t, :, H : 2 * H] = dar
        dgx[t, :, 2 * H :] = dan
        dgh[t, :, :H] = daz
        dgh[t, :, H : 2 * H] = dar
        dgh[t, :, 2 * H :] = dan * rt
        carry = np.where(m, dh * (1.0 - zt), dh) + dgh[t] @ U.T
    return dgx, dgh
