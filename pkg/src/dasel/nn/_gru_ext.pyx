# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled GRU recurrence.

Gate layout along the last axis is ``[update | reset | candidate]`` and the
reset gate is applied after the recurrent projection::

    gh = h @ U + bh
    z = sigmoid(gx_z + gh_z)
    r = sigmoid(gx_r + gh_r)
    n = tanh(gx_n + r * gh_n)
    h' = (1 - z) * h + z * n

Timesteps whose mask is 0 copy the previous state through unchanged.
"""

import numpy as np
cimport numpy as cnp
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef extern from "gru_rows.h" nogil:
    void gru_row_forward(int H, const double* gx, const double* gh,
                         const double* hp, double* hout, double* z, double* r,
                         double* n, double* ghn)
    void gru_row_forward_nocache(int H, const double* gx, const double* gh,
                                 const double* hp, double* hout)
    void gru_row_backward(int H, const double* dh, const double* hp,
                          const double* z, const double* r, const double* n,
                          const double* ghn, double* dgx, double* dgh,
                          double* hp_grad)


cdef void _matmul_rm(int m, int n, int k, double* a, double* b, double* c,
                     double beta) noexcept nogil:
    # Row-major c[m, n] = a[m, k] @ b[k, n] + beta * c, via column-major dgemm.
    cdef char trans = b'N'
    cdef double alpha = 1.0
    dgemm(&trans, &trans, &n, &m, &k, &alpha, b, &n, a, &k, &beta, c, &n)


cdef void _matmul_rm_bt(int m, int n, int k, double* a, double* b, double* c,
                        double beta) noexcept nogil:
    # Row-major c[m, n] = a[m, k] @ b[n, k].T + beta * c.
    cdef char ta = b'T'
    cdef char tb = b'N'
    cdef double alpha = 1.0
    dgemm(&ta, &tb, &n, &m, &k, &alpha, b, &k, a, &k, &beta, c, &n)


def forward(double[:, :, ::1] gx, double[:, ::1] U, double[::1] bh,
            cnp.uint8_t[:, ::1] mask, bint keep_cache=True):
    """Run the recurrence over ``gx`` of shape (T, B, 3H).

    Returns ``(hs, z, r, n, ghn)``; ``hs`` has shape (T + 1, B, H) with
    ``hs[0] == 0``.  Gate caches are ``None`` when ``keep_cache`` is false.
    """
    cdef Py_ssize_t T = gx.shape[0]
    cdef Py_ssize_t B = gx.shape[1]
    cdef Py_ssize_t H = U.shape[0]
    cdef Py_ssize_t G = 3 * H
    if gx.shape[2] != G or U.shape[1] != G or bh.shape[0] != G:
        raise ValueError("gate dimension mismatch")
    if mask.shape[0] != T or mask.shape[1] != B:
        raise ValueError("mask shape mismatch")

    hs_arr = np.zeros((T + 1, B, H), dtype=np.float64)
    cdef double[:, :, ::1] hs = hs_arr
    gh_arr = np.empty((B, G), dtype=np.float64)
    cdef double[:, ::1] gh = gh_arr
    cdef Py_ssize_t TC = T if keep_cache else 1
    z_arr = np.zeros((TC, B, H), dtype=np.float64)
    r_arr = np.zeros((TC, B, H), dtype=np.float64)
    n_arr = np.zeros((TC, B, H), dtype=np.float64)
    ghn_arr = np.zeros((TC, B, H), dtype=np.float64)
    cdef double[:, :, ::1] zc = z_arr
    cdef double[:, :, ::1] rc = r_arr
    cdef double[:, :, ::1] nc = n_arr
    cdef double[:, :, ::1] ghnc = ghn_arr

    cdef Py_ssize_t t, b
    cdef size_t row_bytes = H * sizeof(double)
    if B == 0 or H == 0:
        return (hs_arr, z_arr, r_arr, n_arr, ghn_arr) if keep_cache else (hs_arr, None, None, None, None)
    with nogil:
        for t in range(T):
            for b in range(B):
                memcpy(&gh[b, 0], &bh[0], G * sizeof(double))
            _matmul_rm(<int>B, <int>G, <int>H, &hs[t, 0, 0], &U[0, 0],
                       &gh[0, 0], 1.0)
            for b in range(B):
                if mask[t, b]:
                    if keep_cache:
                        gru_row_forward(<int>H, &gx[t, b, 0], &gh[b, 0],
                                        &hs[t, b, 0], &hs[t + 1, b, 0],
                                        &zc[t, b, 0], &rc[t, b, 0],
                                        &nc[t, b, 0], &ghnc[t, b, 0])
                    else:
                        gru_row_forward_nocache(<int>H, &gx[t, b, 0], &gh[b, 0],
                                                &hs[t, b, 0], &hs[t + 1, b, 0])
                else:
                    memcpy(&hs[t + 1, b, 0], &hs[t, b, 0], row_bytes)
    if keep_cache:
        return hs_arr, z_arr, r_arr, n_arr, ghn_arr
    return hs_arr, None, None, None, None


def backward(double[:, :, ::1] dout, double[:, :, ::1] hs,
             double[:, :, ::1] z, double[:, :, ::1] r, double[:, :, ::1] n,
             double[:, :, ::1] ghn, double[:, ::1] U, cnp.uint8_t[:, ::1] mask):
    """Backpropagate through the recurrence.

    ``dout[t]`` is the gradient with respect to the state emitted at step
    ``t`` (callers zero it on masked steps).  Returns ``(dgx, dgh)``, the
    gradients with respect to the input and recurrent pre-activations.
    """
    cdef Py_ssize_t T = dout.shape[0]
    cdef Py_ssize_t B = dout.shape[1]
    cdef Py_ssize_t H = U.shape[0]
    cdef Py_ssize_t G = 3 * H

    dgx_arr = np.zeros((T, B, G), dtype=np.float64)
    dgh_arr = np.zeros((T, B, G), dtype=np.float64)
    cdef double[:, :, ::1] dgx = dgx_arr
    cdef double[:, :, ::1] dgh = dgh_arr
    carry_arr = np.zeros((B, H), dtype=np.float64)
    dh_arr = np.empty((B, H), dtype=np.float64)
    cdef double[:, ::1] carry = carry_arr
    cdef double[:, ::1] dh = dh_arr

    cdef Py_ssize_t t, b, j
    if B == 0 or H == 0:
        return dgx_arr, dgh_arr
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for j in range(H):
                    dh[b, j] = carry[b, j] + dout[t, b, j]
                if mask[t, b]:
                    gru_row_backward(<int>H, &dh[b, 0], &hs[t, b, 0],
                                     &z[t, b, 0], &r[t, b, 0], &n[t, b, 0],
                                     &ghn[t, b, 0], &dgx[t, b, 0],
                                     &dgh[t, b, 0], &carry[b, 0])
                else:
                    memcpy(&carry[b, 0], &dh[b, 0], H * sizeof(double))
            # dgh rows of masked samples are zero, so the product adds nothing there.
            _matmul_rm_bt(<int>B, <int>H, <int>G, &dgh[t, 0, 0], &U[0, 0],
                          &carry[0, 0], 1.0)
    return dgx_arr, dgh_arr
