import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vaelm.core import _lstm_py, kernels
from vaelm.core.layers import lstm_step

ext = pytest.importorskip("vaelm.core._lstm_ext")


def _inputs(T, B, H, seed):
    rng = np.random.default_rng(seed)
    lens = rng.integers(1, T + 1, size=B)
    mask = (np.arange(T)[:, None] < lens[None, :]).astype(float)
    return (rng.normal(0, 2.0, (T, B, 4 * H)), rng.uniform(-0.5, 0.5, (H, 4 * H)),
            rng.normal(size=(B, H)), rng.normal(size=(B, H)), mask,
            rng.normal(size=(T, B, H)))


@settings(max_examples=40, deadline=None)
@given(T=st.integers(1, 6), B=st.integers(1, 5), H=st.integers(1, 9), seed=st.integers(0, 10**6))
def test_backends_agree(T, B, H, seed):
    xw, wh, h0, c0, mask, dhs = _inputs(T, B, H, seed)
    a = _lstm_py.lstm_forward(xw, wh, h0, c0, mask)
    b = ext.lstm_forward(xw, wh, h0, c0, mask)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=0, atol=1e-12)
    ga = _lstm_py.lstm_backward(dhs, wh, *a[1:], mask)
    gb = ext.lstm_backward(dhs, wh, *b[1:], mask)
    for x, y in zip(ga, gb):
        np.testing.assert_allclose(x, y, rtol=0, atol=1e-11)


def test_extreme_preactivations_stay_finite():
    xw, wh, h0, c0, mask, _ = _inputs(3, 2, 4, 0)
    xw = xw * 1e4
    hs, cs, gates, tcs = ext.lstm_forward(xw, wh, h0, c0, mask)
    assert np.isfinite(hs).all() and np.isfinite(cs).all()
    ref = _lstm_py.lstm_forward(xw, wh, h0, c0, mask)
    np.testing.assert_allclose(hs, ref[0], atol=1e-12)


def test_masked_steps_carry_state():
    xw, wh, h0, c0, _, _ = _inputs(4, 2, 3, 1)
    mask = np.array([[1, 1], [1, 0], [1, 0], [1, 0]], dtype=float)
    hs = kernels.lstm_forward(xw, wh, h0, c0, mask)[0]
    for t in range(2, 5):
        np.testing.assert_array_equal(hs[t, 1], hs[1, 1])


def test_fused_sequence_matches_composed_steps():
    rng = np.random.default_rng(3)
    T, B, I, H = 4, 3, 2, 5
    x = rng.normal(size=(T, B, I))
    w_x, w_h, b = rng.normal(size=(I, 4 * H)), rng.normal(size=(H, 4 * H)), rng.normal(size=4 * H)
    h, c = np.zeros((B, H)), np.zeros((B, H))
    from vaelm.core import tensor as F
    hs = F.lstm_sequence(x, w_x, w_h, b, h, c).data
    for t in range(T):
        hn, (_, cn) = lstm_step(w_x, w_h, b, x[t], h, c)
        h, c = hn.data, cn.data
        np.testing.assert_allclose(hs[t], h, atol=1e-12)


def test_pure_python_switch():
    env = dict(os.environ, VAELM_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from vaelm.core import BACKEND; print(BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"


def test_default_backend_is_compiled():
    assert kernels.BACKEND == "cython"
