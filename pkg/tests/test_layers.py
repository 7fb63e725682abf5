import numpy as np
import pytest

from vaelm.core.layers import (EMBED_RANGE, WEIGHT_RANGE, ModelDims, glorot_bound,
                               init_params)
from vaelm.errors import ContractError

DIMS = ModelDims(30, 8, 10, 4)


def test_lstm_weights_in_range():
    p = init_params(0, DIMS)
    for k, v in p.items():
        if ".lstm." in k:
            assert np.abs(v).max() <= WEIGHT_RANGE


def test_embeddings_in_range():
    p = init_params(0, DIMS)
    for k in ("enc.embed", "dec.embed"):
        assert np.abs(p[k]).max() <= EMBED_RANGE
        assert np.abs(p[k]).max() > WEIGHT_RANGE


def test_linear_maps_glorot():
    p = init_params(0, DIMS)
    w = p["dec.out.w"]
    assert np.abs(w).max() <= glorot_bound(*w.shape)
    np.testing.assert_array_equal(p["dec.out.b"], 0.0)


def test_init_deterministic_and_seed_dependent():
    a, b, c = init_params(5, DIMS), init_params(5, DIMS), init_params(6, DIMS)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not np.array_equal(a["enc.embed"], c["enc.embed"])


def test_bad_dims():
    with pytest.raises(ContractError):
        ModelDims(10, 0, 4, 2)
