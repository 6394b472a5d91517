"""Pure numpy versions of the hot kernels.

Same signatures as the compiled module ``_ckernels``; used when the
extension is not built or ``EDUATTN_PURE_PYTHON=1`` is set.
"""

import numpy as np


def sparsemax_rows(z, mask):
    """Row-wise sparsemax of a 2-D array restricted to ``mask`` (uint8/bool).

    Masked entries come out exactly 0. Rows with no valid entry are all 0.
    """
    z = np.asarray(z, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    n = z.shape[1]
    # masked entries sort to the end and never enter the support
    zs = np.where(mask, z, -np.inf)
    srt = -np.sort(-zs, axis=1, kind="stable")
    valid = np.isfinite(srt)
    csum = np.cumsum(np.where(valid, srt, 0.0), axis=1)
    ks = np.arange(1, n + 1, dtype=np.float64)
    cond = valid & (1.0 + ks * np.where(valid, srt, 0.0) > csum)
    k = cond.sum(axis=1)
    kk = np.maximum(k, 1)
    tau = (csum[np.arange(z.shape[0]), kk - 1] - 1.0) / kk
    p = np.maximum(z - tau[:, None], 0.0)
    p[~mask] = 0.0
    p[k == 0] = 0.0
    return p


def sparsemax_rows_backward(p, g):
    """Jacobian-vector product of row sparsemax given its output ``p``."""
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    supp = p > 0
    cnt = supp.sum(axis=1)
    gm = np.where(supp, g, 0.0).sum(axis=1) / np.maximum(cnt, 1)
    return np.where(supp, g - gm[:, None], 0.0)


def gru_forward(xw, u, mask):
    """Run one GRU direction over time-major pre-activations.

    xw:   [T, B, 3H] input projections ``x @ W + b`` (gate order z, r, n).
    u:    [H, 3H] recurrent weights.
    mask: [T, B] 1 for real steps; padded steps carry the state through.

    Returns (hs, cache) with hs: [T, B, H].
    """
    T, B, H3 = xw.shape
    H = H3 // 3
    u_zr = u[:, : 2 * H]
    u_n = u[:, 2 * H:]
    hs = np.empty((T, B, H))
    hprev = np.empty((T, B, H))
    zs = np.empty((T, B, H))
    rs = np.empty((T, B, H))
    ns = np.empty((T, B, H))
    h = np.zeros((B, H))
    for t in range(T):
        a = xw[t, :, : 2 * H] + h @ u_zr
        zr = 1.0 / (1.0 + np.exp(-a))
        z = zr[:, :H]
        r = zr[:, H:]
        n = np.tanh(xw[t, :, 2 * H:] + (r * h) @ u_n)
        m = mask[t][:, None]
        hnew = h + z * (n - h)
        hprev[t] = h
        zs[t], rs[t], ns[t] = z, r, n
        h = m * hnew + (1.0 - m) * h
        hs[t] = h
    return hs, (hprev, zs, rs, ns)


def gru_backward(dhs, u, mask, cache):
    """Backprop through ``gru_forward``; returns (dxw [T,B,3H], du [H,3H])."""
    hprev, zs, rs, ns = cache
    T, B, H = dhs.shape
    u_z = u[:, :H]
    u_r = u[:, H: 2 * H]
    u_n = u[:, 2 * H:]
    dxw = np.empty((T, B, 3 * H))
    du = np.zeros_like(u)
    dh = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dh_total = dhs[t] + dh
        m = mask[t][:, None]
        dhnew = m * dh_total
        h, z, r, n = hprev[t], zs[t], rs[t], ns[t]
        dz = dhnew * (n - h)
        dan = dhnew * z * (1.0 - n * n)
        rh = r * h
        drh = dan @ u_n.T
        dar = drh * h * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        dxw[t, :, :H] = daz
        dxw[t, :, H: 2 * H] = dar
        dxw[t, :, 2 * H:] = dan
        du[:, :H] += h.T @ daz
        du[:, H: 2 * H] += h.T @ dar
        du[:, 2 * H:] += rh.T @ dan
        dh = ((1.0 - m) * dh_total + dhnew * (1.0 - z) + drh * r
              + daz @ u_z.T + dar @ u_r.T)
    return dxw, du
