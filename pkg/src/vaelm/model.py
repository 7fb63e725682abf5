"""LSTM sequence VAE with a diagonal-Gaussian posterior and N(0, I) prior.

The latent code feeds the decoder twice: a linear map of z gives the
initial cell state (hidden state is its tanh), and z is concatenated to
every decoder input embedding. Dropout is applied to decoder input
embeddings and to decoder outputs before the vocabulary projection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import tensor as F
from .core.layers import ModelDims, init_decoder, init_params, lstm_cell_np
from .core.tensor import Tensor
from .data import BOS, EOS, Batch, make_batch
from .errors import ContractError, NumericError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class Posterior:
    mu: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.mu).all() and np.isfinite(self.log_var).all()):
            raise NumericError("non-finite posterior parameters")

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var)


def kl_terms(mu, log_var) -> Tensor:
    """Elementwise KL(N(mu, exp(log_var)) || N(0, 1)), same shape as mu."""
    return F.scale(F.add(F.mul(mu, mu), F.sub(F.expm1(log_var), log_var)), 0.5)


def kl_to_prior(posterior: Posterior) -> tuple[np.ndarray, float]:
    """Per-dimension KL to the standard normal prior and its total."""
    per_dim = kl_terms(Tensor(posterior.mu), Tensor(posterior.log_var)).data
    total = per_dim.sum(axis=-1)
    return per_dim, (float(total) if per_dim.ndim == 1 else total)


def reparameterize(posterior: Posterior, rng: np.random.Generator) -> np.ndarray:
    eps = rng.standard_normal(posterior.mu.shape)
    return posterior.mu + posterior.sigma * eps


def log_normal_std(z) -> Tensor:
    """log N(z; 0, I) summed over the last axis."""
    d = F.as_tensor(z).shape[-1]
    return F.scale(F.add(F.sum(F.mul(z, z), axis=-1), d * LOG_2PI), -0.5)


def repeat_batch(batch: Batch, k: int) -> Batch:
    """Each sentence repeated k times consecutively (sentence-major)."""
    rep = lambda a: np.repeat(a, k, axis=1)  # noqa: E731
    return Batch(rep(batch.enc_ids), rep(batch.enc_mask), rep(batch.dec_in),
                 rep(batch.dec_out), rep(batch.dec_mask), np.repeat(batch.n_tokens, k))


class SeqVae:
    ENCODER_PREFIX = "enc."
    DECODER_PREFIX = "dec."

    def __init__(self, dims: ModelDims, params: dict[str, np.ndarray], dropout: float = 0.5):
        self.dims = dims
        self.dropout = dropout
        self.params: dict[str, Tensor] = {
            k: Tensor(np.array(v, dtype=np.float64), requires_grad=True, name=k)
            for k, v in params.items()}

    @classmethod
    def create(cls, dims: ModelDims, seed: int, dropout: float = 0.5) -> "SeqVae":
        return cls(dims, init_params(seed, dims), dropout)

    # --- parameter bookkeeping --------------------------------------------------

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}

    def copy(self) -> "SeqVae":
        return SeqVae(self.dims, {k: v.copy() for k, v in self.arrays().items()}, self.dropout)

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, v in arrays.items():
            self.params[k].data = np.array(v, dtype=np.float64)

    def names(self, part: str | None = None) -> list[str]:
        if part is None:
            return list(self.params)
        prefix = {"encoder": self.ENCODER_PREFIX, "decoder": self.DECODER_PREFIX}[part]
        return [k for k in self.params if k.startswith(prefix)]

    def reset_decoder(self, rng: np.random.Generator) -> None:
        self.load_arrays(init_decoder(rng, self.dims))

    # --- differentiable pieces ------------------------------------------------------

    def posterior_t(self, batch: Batch) -> tuple[Tensor, Tensor]:
        p = self.params
        T, B = batch.enc_ids.shape
        H = self.dims.hidden_dim
        emb = F.gather(p["enc.embed"], batch.enc_ids)
        zeros = np.zeros((B, H))
        hs = F.lstm_sequence(emb, p["enc.lstm.w_x"], p["enc.lstm.w_h"], p["enc.lstm.b"],
                             zeros, zeros, batch.enc_mask)
        final = F.getitem(hs, T - 1)
        mu = F.add(F.matmul(final, p["enc.mu.w"]), p["enc.mu.b"])
        log_var = F.add(F.matmul(final, p["enc.logvar.w"]), p["enc.logvar.b"])
        return mu, log_var

    def decoder_nll_t(self, batch: Batch, z, rng: np.random.Generator | None = None) -> Tensor:
        """Teacher-forced -log p(x|z) per sentence, shape (B,).

        Dropout is active only when ``rng`` is given.
        """
        p = self.params
        z = F.as_tensor(z)
        T, B = batch.dec_in.shape
        d, H, V = self.dims.latent_dim, self.dims.hidden_dim, self.dims.vocab_size
        if z.shape != (B, d):
            raise ContractError(f"latent shape {z.shape}, expected {(B, d)}")
        rate = self.dropout if rng is not None else 0.0
        emb = F.gather(p["dec.embed"], batch.dec_in)
        if rate > 0:
            emb = F.dropout(emb, F.dropout_mask(rng, emb.shape, rate), rate)
        c0 = F.add(F.matmul(z, p["dec.init.w"]), p["dec.init.b"])
        h0 = F.tanh(c0)
        zt = F.broadcast_to(F.reshape(z, (1, B, d)), (T, B, d))
        x = F.concat([emb, zt], axis=2)
        hs = F.lstm_sequence(x, p["dec.lstm.w_x"], p["dec.lstm.w_h"], p["dec.lstm.b"],
                             h0, c0, batch.dec_mask)
        if rate > 0:
            hs = F.dropout(hs, F.dropout_mask(rng, hs.shape, rate), rate)
        logits = F.add(F.matmul(F.reshape(hs, (T * B, H)), p["dec.out.w"]), p["dec.out.b"])
        ce = F.softmax_cross_entropy(logits, batch.dec_out.reshape(-1),
                                     batch.dec_mask.reshape(-1))
        return F.sum(F.reshape(ce, (T, B)), axis=0)

    # --- numpy conveniences (no tape) -------------------------------------------------

    def batch(self, sentences: list[list[int]]) -> Batch:
        return make_batch(sentences, self.dims.vocab_size)

    def encode(self, sentence: list[int]) -> Posterior:
        mu, lv = self.posterior_t(self.batch([sentence]))
        return Posterior(mu.data[0], lv.data[0])

    def encode_many(self, sentences, batch_size: int = 256) -> Posterior:
        mus, lvs = [], []
        for i in range(0, len(sentences), batch_size):
            mu, lv = self.posterior_t(self.batch(sentences[i:i + batch_size]))
            mus.append(mu.data)
            lvs.append(lv.data)
        return Posterior(np.concatenate(mus), np.concatenate(lvs))

    def reconstruction_nll(self, sentence: list[int], z) -> float:
        z = np.asarray(z, dtype=np.float64).reshape(1, -1)
        return float(self.decoder_nll_t(self.batch([sentence]), z).data[0])

    def nll_many(self, sentences, z, batch_size: int = 256) -> np.ndarray:
        """-log p(x_i | z_i) for paired sentences and codes."""
        z = np.asarray(z, dtype=np.float64)
        out = []
        for i in range(0, len(sentences), batch_size):
            b = self.batch(sentences[i:i + batch_size])
            out.append(self.decoder_nll_t(b, z[i:i + batch_size]).data)
        return np.concatenate(out) if out else np.zeros(0)

    def greedy_decode_many(self, z, max_len: int) -> list[list[int]]:
        """Argmax decoding for each row of ``z``; returns word ids without markers."""
        p = self.arrays()
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        N = z.shape[0]
        out: list[list[int]] = [[] for _ in range(N)]
        if max_len <= 0:
            return out
        c = z @ p["dec.init.w"] + p["dec.init.b"]
        h = np.tanh(c)
        prev = np.full(N, BOS)
        alive = np.ones(N, dtype=bool)
        for _ in range(max_len):
            x = np.concatenate([p["dec.embed"][prev], z], axis=1)
            h, c = lstm_cell_np(p["dec.lstm.w_x"], p["dec.lstm.w_h"], p["dec.lstm.b"], x, h, c)
            tok = np.argmax(h @ p["dec.out.w"] + p["dec.out.b"], axis=1)
            for n in np.flatnonzero(alive):
                if tok[n] == EOS:
                    alive[n] = False
                else:
                    out[n].append(int(tok[n]))
            if not alive.any():
                break
            prev = tok
        return out

    def greedy_decode(self, z, max_len: int) -> list[int]:
        return self.greedy_decode_many(np.asarray(z).reshape(1, -1), max_len)[0]
