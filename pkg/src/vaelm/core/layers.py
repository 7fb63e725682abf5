"""Parameter initialization and layer helpers.

LSTM weights and biases are drawn from U(-0.01, 0.01) and embeddings from
U(-0.1, 0.1). Linear maps (posterior heads, latent-to-state, output
projection) use Glorot-uniform weights and zero biases: with every weight
at the 0.01 scale the encoder-to-decoder path starts at a saddle that
autoencoder pretraining leaves only after many epochs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, DimensionError
from . import tensor as F

WEIGHT_RANGE = 0.01
EMBED_RANGE = 0.1


@dataclass(frozen=True)
class ModelDims:
    vocab_size: int
    embed_dim: int = 64
    hidden_dim: int = 128
    latent_dim: int = 32

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "hidden_dim", "latent_dim"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")


def _uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


def init_lstm(rng: np.random.Generator, n_in: int, n_hidden: int, prefix: str) -> dict:
    return {
        f"{prefix}.w_x": _uniform(rng, (n_in, 4 * n_hidden), WEIGHT_RANGE),
        f"{prefix}.w_h": _uniform(rng, (n_hidden, 4 * n_hidden), WEIGHT_RANGE),
        f"{prefix}.b": _uniform(rng, (4 * n_hidden,), WEIGHT_RANGE),
    }


def glorot_bound(n_in: int, n_out: int) -> float:
    return float(np.sqrt(6.0 / (n_in + n_out)))


def init_linear(rng: np.random.Generator, n_in: int, n_out: int, prefix: str) -> dict:
    return {
        f"{prefix}.w": _uniform(rng, (n_in, n_out), glorot_bound(n_in, n_out)),
        f"{prefix}.b": np.zeros(n_out),
    }


def init_embedding(rng: np.random.Generator, vocab: int, dim: int, name: str) -> dict:
    return {name: _uniform(rng, (vocab, dim), EMBED_RANGE)}


def init_encoder(rng: np.random.Generator, dims: ModelDims) -> dict:
    p = {}
    p.update(init_embedding(rng, dims.vocab_size, dims.embed_dim, "enc.embed"))
    p.update(init_lstm(rng, dims.embed_dim, dims.hidden_dim, "enc.lstm"))
    p.update(init_linear(rng, dims.hidden_dim, dims.latent_dim, "enc.mu"))
    p.update(init_linear(rng, dims.hidden_dim, dims.latent_dim, "enc.logvar"))
    return p


def init_decoder(rng: np.random.Generator, dims: ModelDims) -> dict:
    p = {}
    p.update(init_embedding(rng, dims.vocab_size, dims.embed_dim, "dec.embed"))
    p.update(init_lstm(rng, dims.embed_dim + dims.latent_dim, dims.hidden_dim, "dec.lstm"))
    p.update(init_linear(rng, dims.latent_dim, dims.hidden_dim, "dec.init"))
    p.update(init_linear(rng, dims.hidden_dim, dims.vocab_size, "dec.out"))
    return p


def init_params(seed: int, dims: ModelDims) -> dict[str, np.ndarray]:
    """Full encoder + decoder parameter set, deterministic in ``seed``.

    Encoder and decoder draw from separate child streams so that a decoder
    can be re-initialized without touching the encoder's stream.
    """
    enc_seq, dec_seq = np.random.SeedSequence(seed).spawn(2)
    params = init_encoder(np.random.default_rng(enc_seq), dims)
    params.update(init_decoder(np.random.default_rng(dec_seq), dims))
    return params


def lstm_step(w_x, w_h, b, x, h, c):
    """One LSTM step built from primitive tensor ops.

    Reference path for gradient checks; training uses the fused
    ``lstm_sequence`` op.
    """
    x, h, c = F.as_tensor(x), F.as_tensor(h), F.as_tensor(c)
    H = F.as_tensor(w_h).shape[0]
    if x.shape[-1] != F.as_tensor(w_x).shape[0] or h.shape[-1] != H or c.shape[-1] != H:
        raise DimensionError(f"lstm_step: x{x.shape} h{h.shape} c{c.shape}")
    g = F.add(F.add(F.matmul(x, w_x), F.matmul(h, w_h)), b)
    i = F.sigmoid(F.getitem(g, (Ellipsis, slice(0, H))))
    f = F.sigmoid(F.getitem(g, (Ellipsis, slice(H, 2 * H))))
    cand = F.tanh(F.getitem(g, (Ellipsis, slice(2 * H, 3 * H))))
    o = F.sigmoid(F.getitem(g, (Ellipsis, slice(3 * H, 4 * H))))
    c_new = F.add(F.mul(f, c), F.mul(i, cand))
    h_new = F.mul(o, F.tanh(c_new))
    return h_new, (h_new, c_new)


def lstm_cell_np(w_x, w_h, b, x, h, c):
    """Inference-only numpy LSTM step on (B, I) inputs; returns (h, c)."""
    H = w_h.shape[0]
    g = x @ w_x + h @ w_h + b
    s = 0.5 * (np.tanh(0.5 * g) + 1.0)
    c_new = s[:, H:2 * H] * c + s[:, :H] * np.tanh(g[:, 2 * H:3 * H])
    return s[:, 3 * H:] * np.tanh(c_new), c_new
