# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: masked row sparsemax and the GRU time recurrence.

Mirrors ``_pykernels`` exactly. The GRU loop calls BLAS dgemm directly so a
time step costs no Python-level dispatch.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh
from libc.stdlib cimport malloc, free, qsort
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef int _cmp_desc(const void* a, const void* b) noexcept nogil:
    cdef double x = (<const double*>a)[0]
    cdef double y = (<const double*>b)[0]
    if x < y:
        return 1
    if x > y:
        return -1
    return 0


def sparsemax_rows(z, mask):
    cdef double[:, ::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef cnp.uint8_t[:, ::1] mv = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t R = zv.shape[0], N = zv.shape[1]
    out = np.zeros((R, N), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double* buf = <double*>malloc(max(N, 1) * sizeof(double))
    cdef Py_ssize_t i, j, cnt, k
    cdef double csum, tau, v
    try:
        with nogil:
            for i in range(R):
                cnt = 0
                for j in range(N):
                    if mv[i, j]:
                        buf[cnt] = zv[i, j]
                        cnt += 1
                if cnt == 0:
                    continue
                qsort(buf, cnt, sizeof(double), _cmp_desc)
                csum = 0.0
                k = 0
                tau = 0.0
                for j in range(cnt):
                    csum += buf[j]
                    if 1.0 + (j + 1) * buf[j] > csum:
                        k = j + 1
                        tau = csum
                tau = (tau - 1.0) / k
                for j in range(N):
                    if mv[i, j]:
                        v = zv[i, j] - tau
                        if v > 0.0:
                            ov[i, j] = v
    finally:
        free(buf)
    return out


def sparsemax_rows_backward(p, g):
    cdef double[:, ::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef double[:, ::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t R = pv.shape[0], N = pv.shape[1]
    out = np.zeros((R, N), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j, cnt
    cdef double s
    with nogil:
        for i in range(R):
            cnt = 0
            s = 0.0
            for j in range(N):
                if pv[i, j] > 0.0:
                    cnt += 1
                    s += gv[i, j]
            if cnt == 0:
                continue
            s /= cnt
            for j in range(N):
                if pv[i, j] > 0.0:
                    ov[i, j] = gv[i, j] - s
    return out


cdef inline void _mm(bint ta, bint tb, int m, int n, int k, double* a, int lda,
                     double* b, int ldb, double beta, double* c, int ldc) noexcept nogil:
    # row-major C[m,n] = op(A) @ op(B) + beta*C via column-major dgemm on the transposes
    cdef char ca = b'T' if ta else b'N'
    cdef char cb = b'T' if tb else b'N'
    cdef double alpha = 1.0
    dgemm(&cb, &ca, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)


def gru_forward(xw, u, mask):
    cdef double[:, :, ::1] X = np.ascontiguousarray(xw, dtype=np.float64)
    cdef double[:, ::1] U = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[:, ::1] M = np.ascontiguousarray(mask, dtype=np.float64)
    cdef int T = X.shape[0], B = X.shape[1], H3 = X.shape[2]
    cdef int H = H3 // 3
    hs_a = np.empty((T, B, H))
    hp_a = np.empty((T, B, H))
    z_a = np.empty((T, B, H))
    r_a = np.empty((T, B, H))
    n_a = np.empty((T, B, H))
    cdef double[:, :, ::1] hs = hs_a, hp = hp_a, zs = z_a, rs = r_a, ns = n_a
    h_a = np.zeros((B, H))
    a_a = np.empty((B, 2 * H))
    rh_a = np.empty((B, H))
    an_a = np.empty((B, H))
    cdef double[:, ::1] h = h_a, a = a_a, rh = rh_a, an = an_a
    cdef int t, b, j
    cdef double z, r, n, m, hv
    if T == 0 or B == 0 or H == 0:
        return hs_a, (hp_a, z_a, r_a, n_a)
    with nogil:
        for t in range(T):
            _mm(False, False, B, 2 * H, H, &h[0, 0], H, &U[0, 0], H3, 0.0, &a[0, 0], 2 * H)
            for b in range(B):
                for j in range(2 * H):
                    a[b, j] = 1.0 / (1.0 + exp(-(a[b, j] + X[t, b, j])))
                for j in range(H):
                    rh[b, j] = a[b, H + j] * h[b, j]
            _mm(False, False, B, H, H, &rh[0, 0], H, &U[0, 2 * H], H3, 0.0, &an[0, 0], H)
            for b in range(B):
                m = M[t, b]
                for j in range(H):
                    z = a[b, j]
                    r = a[b, H + j]
                    n = tanh(an[b, j] + X[t, b, 2 * H + j])
                    hv = h[b, j]
                    hp[t, b, j] = hv
                    zs[t, b, j] = z
                    rs[t, b, j] = r
                    ns[t, b, j] = n
                    h[b, j] = m * (hv + z * (n - hv)) + (1.0 - m) * hv
                    hs[t, b, j] = h[b, j]
    return hs_a, (hp_a, z_a, r_a, n_a)


def gru_backward(dhs, u, mask, cache):
    cdef double[:, :, ::1] dH = np.ascontiguousarray(dhs, dtype=np.float64)
    cdef double[:, ::1] U = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[:, ::1] M = np.ascontiguousarray(mask, dtype=np.float64)
    cdef double[:, :, ::1] hp = np.ascontiguousarray(cache[0])
    cdef double[:, :, ::1] zs = np.ascontiguousarray(cache[1])
    cdef double[:, :, ::1] rs = np.ascontiguousarray(cache[2])
    cdef double[:, :, ::1] ns = np.ascontiguousarray(cache[3])
    cdef int T = dH.shape[0], B = dH.shape[1], H = dH.shape[2]
    cdef int H3 = 3 * H
    dxw_a = np.zeros((T, B, H3))
    du_a = np.zeros((H, H3))
    cdef double[:, :, ::1] dxw = dxw_a
    cdef double[:, ::1] du = du_a
    dh_a = np.zeros((B, H))
    dtot_a = np.empty((B, H))
    rh_a = np.empty((B, H))
    drh_a = np.empty((B, H))
    dzr_a = np.empty((B, 2 * H))
    cdef double[:, ::1] dh = dh_a, dtot = dtot_a, rh = rh_a, drh = drh_a, dzr = dzr_a
    cdef int t, b, j
    cdef double m, dhn, hv, z, r, n, dan
    if T == 0 or B == 0 or H == 0:
        return dxw_a, du_a
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                m = M[t, b]
                for j in range(H):
                    dtot[b, j] = dH[t, b, j] + dh[b, j]
                    dhn = m * dtot[b, j]
                    hv = hp[t, b, j]
                    z = zs[t, b, j]
                    n = ns[t, b, j]
                    r = rs[t, b, j]
                    dan = dhn * z * (1.0 - n * n)
                    dxw[t, b, 2 * H + j] = dan
                    dxw[t, b, j] = dhn * (n - hv) * z * (1.0 - z)
                    rh[b, j] = r * hv
                    dh[b, j] = (1.0 - m) * dtot[b, j] + dhn * (1.0 - z)
            # drh = dan @ U_n^T
            _mm(False, True, B, H, H, &dxw[t, 0, 2 * H], H3, &U[0, 2 * H], H3, 0.0, &drh[0, 0], H)
            for b in range(B):
                for j in range(H):
                    hv = hp[t, b, j]
                    r = rs[t, b, j]
                    dxw[t, b, H + j] = drh[b, j] * hv * r * (1.0 - r)
                    dh[b, j] += drh[b, j] * r
                    dzr[b, j] = dxw[t, b, j]
                    dzr[b, H + j] = dxw[t, b, H + j]
            # dh += [daz, dar] @ U_zr^T
            _mm(False, True, B, H, 2 * H, &dzr[0, 0], 2 * H, &U[0, 0], H3, 1.0, &dh[0, 0], H)
            # dU_zr += hprev^T @ [daz, dar];  dU_n += rh^T @ dan
            _mm(True, False, H, 2 * H, B, &hp[t, 0, 0], H, &dzr[0, 0], 2 * H, 1.0, &du[0, 0], H3)
            _mm(True, False, H, H, B, &rh[0, 0], H, &dxw[t, 0, 2 * H], H3, 1.0, &du[0, 2 * H], H3)
    return dxw_a, du_a
