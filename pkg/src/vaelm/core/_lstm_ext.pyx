# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled LSTM sequence kernels; same contract as ``_lstm_py``.

Gate nonlinearities are written in terms of ``exp`` over contiguous rows so
the compiler can vectorize them. Exponent arguments are clamped to keep every
intermediate finite.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

DEF CLAMP = 600.0


cdef inline void _activate_row(double* g, double* tc, double* c_prev, double* c_out,
                               double* h_out, int H) noexcept nogil:
    # g holds raw pre-activations (4H); overwritten with activated gates
    cdef int j
    cdef double a
    cdef double* gc = g + 2 * H
    for j in range(4 * H):
        a = -g[j]
        g[j] = a if a < CLAMP else CLAMP
    for j in range(H):
        gc[j] = gc[j] + gc[j]
    for j in range(4 * H):
        g[j] = 1.0 / (1.0 + exp(g[j]))
    for j in range(H):
        gc[j] = 2.0 * gc[j] - 1.0
    for j in range(H):
        c_out[j] = g[H + j] * c_prev[j] + g[j] * gc[j]
    for j in range(H):
        a = -2.0 * c_out[j]
        tc[j] = a if a < CLAMP else CLAMP
    for j in range(H):
        tc[j] = 2.0 / (1.0 + exp(tc[j])) - 1.0
    for j in range(H):
        h_out[j] = g[3 * H + j] * tc[j]


cdef inline void _backprop_row(double* gr, double* tc, double* c_prev, double* dh,
                               double* dhs, double* dc, double* dg, double* nxt,
                               int H) noexcept nogil:
    cdef int j
    cdef double i_, f_, g_, o_, t_, dhn, dcn
    for j in range(H):
        i_ = gr[j]
        f_ = gr[H + j]
        g_ = gr[2 * H + j]
        o_ = gr[3 * H + j]
        t_ = tc[j]
        dhn = dh[j] + dhs[j]
        dcn = dc[j] + dhn * o_ * (1.0 - t_ * t_)
        dg[j] = dcn * g_ * i_ * (1.0 - i_)
        dg[H + j] = dcn * c_prev[j] * f_ * (1.0 - f_)
        dg[2 * H + j] = dcn * i_ * (1.0 - g_ * g_)
        dg[3 * H + j] = dhn * t_ * o_ * (1.0 - o_)
        dc[j] = dcn * f_
        nxt[j] = 0.0


def lstm_forward(double[:, :, ::1] xw, double[:, ::1] wh, double[:, ::1] h0,
                 double[:, ::1] c0, double[:, ::1] mask):
    cdef int T = xw.shape[0], B = xw.shape[1], H4 = xw.shape[2]
    cdef int H = H4 // 4
    hs_a = np.empty((T + 1, B, H))
    cs_a = np.empty((T + 1, B, H))
    gates_a = np.empty((T, B, H4))
    tcs_a = np.empty((T, B, H))
    cdef double[:, :, ::1] hs = hs_a
    cdef double[:, :, ::1] cs = cs_a
    cdef double[:, :, ::1] gates = gates_a
    cdef double[:, :, ::1] tcs = tcs_a
    cdef int t, b, j
    cdef double one = 1.0
    cdef char ntr = b'N'
    hs[0, :, :] = h0
    cs[0, :, :] = c0
    with nogil:
        for t in range(T):
            gates[t, :, :] = xw[t]
            # gates[t] (B,4H) += hs[t] (B,H) @ wh (H,4H), column-major view
            dgemm(&ntr, &ntr, &H4, &B, &H, &one, &wh[0, 0], &H4,
                  &hs[t, 0, 0], &H, &one, &gates[t, 0, 0], &H4)
            for b in range(B):
                _activate_row(&gates[t, b, 0], &tcs[t, b, 0], &cs[t, b, 0],
                              &cs[t + 1, b, 0], &hs[t + 1, b, 0], H)
                if mask[t, b] <= 0:
                    for j in range(H):
                        cs[t + 1, b, j] = cs[t, b, j]
                        hs[t + 1, b, j] = hs[t, b, j]
    return hs_a, cs_a, gates_a, tcs_a


def lstm_backward(double[:, :, ::1] dhs, double[:, ::1] wh, double[:, :, ::1] cs,
                  double[:, :, ::1] gates, double[:, :, ::1] tcs, double[:, ::1] mask):
    cdef int T = gates.shape[0], B = gates.shape[1], H4 = gates.shape[2]
    cdef int H = H4 // 4
    dxw_a = np.empty((T, B, H4))
    dh_a = np.zeros((B, H))
    dc_a = np.zeros((B, H))
    nxt_a = np.empty((B, H))
    cdef double[:, :, ::1] dxw = dxw_a
    cdef double[:, ::1] dh = dh_a
    cdef double[:, ::1] dc = dc_a
    cdef double[:, ::1] nxt = nxt_a
    cdef int t, b, j
    cdef double one = 1.0
    cdef double* dg
    cdef char ntr = b'N'
    cdef char tr = b'T'
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                dg = &dxw[t, b, 0]
                if mask[t, b] > 0:
                    _backprop_row(&gates[t, b, 0], &tcs[t, b, 0], &cs[t, b, 0], &dh[b, 0],
                                  &dhs[t, b, 0], &dc[b, 0], dg, &nxt[b, 0], H)
                else:
                    for j in range(H4):
                        dg[j] = 0.0
                    for j in range(H):
                        nxt[b, j] = dh[b, j] + dhs[t, b, j]
            # nxt (B,H) += dxw[t] (B,4H) @ wh.T (4H,H)
            dgemm(&tr, &ntr, &H, &B, &H4, &one, &wh[0, 0], &H4,
                  &dxw[t, 0, 0], &H4, &one, &nxt[0, 0], &H)
            dh[:, :] = nxt
    return dxw_a, dh_a, dc_a
