"""Pure-numpy LSTM sequence kernels (fallback for the compiled extension).

Shapes: ``xw`` (T, B, 4H) input projections with bias already added,
``wh`` (H, 4H), ``h0``/``c0`` (B, H), ``mask`` (T, B) of 0/1 floats.
"""
import numpy as np


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def lstm_forward(xw, wh, h0, c0, mask):
    T, B, H4 = xw.shape
    H = H4 // 4
    hs = np.empty((T + 1, B, H))
    cs = np.empty((T + 1, B, H))
    gates = np.empty((T, B, H4))
    tcs = np.empty((T, B, H))
    hs[0] = h0
    cs[0] = c0
    for t in range(T):
        g = xw[t] + hs[t] @ wh
        ifo = gates[t]
        ifo[:, :2 * H] = _sigmoid(g[:, :2 * H])
        ifo[:, 2 * H:3 * H] = np.tanh(g[:, 2 * H:3 * H])
        ifo[:, 3 * H:] = _sigmoid(g[:, 3 * H:])
        i, f, gg, o = ifo[:, :H], ifo[:, H:2 * H], ifo[:, 2 * H:3 * H], ifo[:, 3 * H:]
        cn = f * cs[t] + i * gg
        tc = np.tanh(cn)
        tcs[t] = tc
        keep = mask[t][:, None] > 0
        cs[t + 1] = np.where(keep, cn, cs[t])
        hs[t + 1] = np.where(keep, o * tc, hs[t])
    return hs, cs, gates, tcs


def lstm_backward(dhs, wh, cs, gates, tcs, mask):
    """Returns (d xw, d h0, d c0); weight gradients are formed by the caller."""
    T, B, H4 = gates.shape
    H = H4 // 4
    dxw = np.empty((T, B, H4))
    dh = np.zeros((B, H))
    dc = np.zeros((B, H))
    wht = wh.T
    for t in range(T - 1, -1, -1):
        dh = dh + dhs[t]
        keep = mask[t][:, None] > 0
        ifo = gates[t]
        i, f, gg, o = ifo[:, :H], ifo[:, H:2 * H], ifo[:, 2 * H:3 * H], ifo[:, 3 * H:]
        tc = tcs[t]
        dhn = np.where(keep, dh, 0.0)
        dcn = np.where(keep, dc, 0.0) + dhn * o * (1.0 - tc * tc)
        dg = dxw[t]
        dg[:, :H] = dcn * gg * i * (1.0 - i)
        dg[:, H:2 * H] = dcn * cs[t] * f * (1.0 - f)
        dg[:, 2 * H:3 * H] = dcn * i * (1.0 - gg * gg)
        dg[:, 3 * H:] = dhn * tc * o * (1.0 - o)
        dc = np.where(keep, 0.0, dc) + dcn * f
        dh = np.where(keep, 0.0, dh) + dg @ wht
    return dxw, dh, dc
