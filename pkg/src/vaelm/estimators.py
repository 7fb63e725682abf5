"""Likelihood estimators, latent statistics and exact-marginal oracles.

Monte Carlo draws for sentence ``i`` come from ``default_rng([seed, i])`` so
results do not depend on how sentences are grouped into batches.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import logsumexp

from .errors import ContractError
from .model import LOG_2PI, Posterior, SeqVae, kl_to_prior
from .objectives import iw_log_weights, iwae_bound

REPORT_FIELDS = ("nll", "ppl", "recon", "kl", "neg_elbo", "elbo_ppl", "mi", "au")


@dataclass
class EvalReport:
    nll: float
    ppl: float
    recon: float
    kl: float
    neg_elbo: float
    elbo_ppl: float
    mi: float
    au: int

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in REPORT_FIELDS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)


def sentence_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def ppl_from_nll(total_nll: float, total_tokens: int) -> float:
    """exp(total NLL / total tokens); tokens include one </s> per sentence."""
    if total_tokens <= 0:
        raise ContractError("total_tokens must be positive")
    return math.exp(total_nll / total_tokens)


def token_count(sentences) -> int:
    return int(sum(len(s) - 1 for s in sentences))


# --- importance-weighted likelihood -------------------------------------------

def _iw_log_weights_many(model: SeqVae, sentences, k: int, seed: int,
                         chunk: int = 4096) -> list[np.ndarray]:
    """(k,) log-weight vectors per sentence, computed in sentence groups."""
    d = model.dims.latent_dim
    per_group = max(1, chunk // k)
    out = []
    for start in range(0, len(sentences), per_group):
        group = sentences[start:start + per_group]
        eps = np.stack([sentence_rng(seed, start + j).standard_normal((k, d))
                        for j in range(len(group))])
        lw = iw_log_weights(model, model.batch(group), eps).data
        out.extend(lw)
    return out


def iw_nll(model: SeqVae, sentence, k: int, rng: np.random.Generator) -> float:
    """-log (1/k) sum_j p(x, z_j) / q(z_j | x) with z_j ~ q(z | x)."""
    if k < 1:
        raise ContractError("k must be at least 1")
    eps = rng.standard_normal((1, k, model.dims.latent_dim))
    lw = iw_log_weights(model, model.batch([sentence]), eps)
    return float(iwae_bound(lw).data[0])


def iw_nll_many(model: SeqVae, sentences, k: int, seed: int) -> np.ndarray:
    if k < 1:
        raise ContractError("k must be at least 1")
    return np.array([-(logsumexp(lw) - math.log(k))
                     for lw in _iw_log_weights_many(model, sentences, k, seed)])


# --- quadrature oracle ------------------------------------------------------------

def gauss_hermite_log_marginal(log_lik: Callable[[np.ndarray], np.ndarray], dim: int,
                               order: int) -> float:
    """log of integral p(x|z) N(z; 0, I) dz by Gauss-Hermite quadrature.

    ``log_lik`` maps an (N, dim) array of latent points to (N,) values of
    log p(x|z). Supports dim 1 and 2 (tensor-product grid).
    """
    if dim not in (1, 2):
        raise ContractError("quadrature supports latent_dim 1 or 2")
    t, w = hermgauss(order)
    nodes = math.sqrt(2.0) * t
    logw = np.log(w) - 0.5 * math.log(math.pi)
    if dim == 1:
        z = nodes[:, None]
        lw = logw
    else:
        a, b = np.meshgrid(nodes, nodes, indexing="ij")
        z = np.stack([a.ravel(), b.ravel()], axis=1)
        lw = (logw[:, None] + logw[None, :]).ravel()
    return float(logsumexp(lw + log_lik(z)))


def require_oracle(model: SeqVae) -> None:
    if model.dims.latent_dim > 2:
        raise ContractError(f"oracle needs latent_dim <= 2, got {model.dims.latent_dim}")


def quadrature_log_marginal(model: SeqVae, sentence, order: int = 64) -> float:
    """Reference log p(x) for a model with a one- or two-dimensional latent."""
    require_oracle(model)
    if order < 16:
        raise ContractError("quadrature order must be at least 16")

    def log_lik(z):
        return -model.nll_many([sentence] * len(z), z, batch_size=4096)

    return gauss_hermite_log_marginal(log_lik, model.dims.latent_dim, order)


# --- latent statistics ----------------------------------------------------------------

def active_units_from_means(mu: np.ndarray, threshold: float = 0.01) -> int:
    if mu.shape[0] < 2:
        raise ContractError("active units need at least two sentences")
    return int((mu.var(axis=0) > threshold).sum())


def active_units(model: SeqVae, sentences, threshold: float = 0.01) -> int:
    """Number of latent dimensions whose posterior mean varies across inputs
    with variance above ``threshold``."""
    if len(sentences) < 2:
        raise ContractError("active units need at least two sentences")
    return active_units_from_means(model.encode_many(sentences).mu, threshold)


def mi_terms(post: Posterior, z: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Per-sample log q(z_n | x_n) - log q_agg(z_n) for z_n ~ q(z | x_n).

    q_agg is the uniform mixture of the N posteriors. Using the same draw
    in both terms cancels most of the Monte Carlo noise: identical
    posteriors give exactly zero.
    """
    mu, lv = post.mu, post.log_var
    N, d = mu.shape
    if N < 2:
        raise ContractError("mutual information needs at least two sentences")
    inv_var = np.exp(-lv)
    norm = -0.5 * (d * LOG_2PI + lv.sum(axis=1))
    log_qagg = np.empty(N)
    log_q = np.empty(N)
    for s in range(0, N, chunk):
        dev = z[s:s + chunk, None, :] - mu[None, :, :]
        dens = -0.5 * np.einsum("abk,bk->ab", dev * dev, inv_var) + norm[None, :]
        log_qagg[s:s + chunk] = logsumexp(dens, axis=1) - math.log(N)
        rows = np.arange(s, min(s + chunk, N))
        log_q[rows] = dens[rows - s, rows]
    return log_q - log_qagg


def mi_from_posterior(post: Posterior, z: np.ndarray) -> float:
    return float(mi_terms(post, z).mean())


def mutual_information(model: SeqVae, sentences, rng: np.random.Generator) -> float:
    post = model.encode_many(sentences)
    z = post.mu + post.sigma * rng.standard_normal(post.mu.shape)
    return mi_from_posterior(post, z)


# --- full report ------------------------------------------------------------------------

def evaluate(model: SeqVae, sentences, k: int = 1000, seed: int = 0,
             mi_size: int = 1000, au_threshold: float = 0.01) -> EvalReport:
    """All report fields on ``sentences`` (per-sentence averages in nats).

    Recon uses the first importance sample of each sentence, so it is a
    single-sample estimate of the reconstruction term.
    """
    if not sentences:
        raise ContractError("empty corpus")
    n = len(sentences)
    post = model.encode_many(sentences)
    _, kl_each = kl_to_prior(post)
    d = model.dims.latent_dim
    z0 = np.stack([post.mu[i] + post.sigma[i] * sentence_rng(seed, i).standard_normal((k, d))[0]
                   for i in range(n)])
    recon_each = model.nll_many(sentences, z0)
    nll_each = iw_nll_many(model, sentences, k, seed)
    tokens = token_count(sentences)
    recon = float(recon_each.mean())
    kl = float(kl_each.mean())
    neg_elbo_total = float(recon_each.sum() + kl_each.sum())
    m = min(mi_size, n)
    mi_rng = np.random.default_rng([seed, n, 1])
    if m >= 2:
        sub = Posterior(post.mu[:m], post.log_var[:m])
        mi = mi_from_posterior(sub, sub.mu + sub.sigma * mi_rng.standard_normal(sub.mu.shape))
        au = active_units_from_means(post.mu, au_threshold)
    else:
        mi, au = 0.0, 0
    return EvalReport(
        nll=float(nll_each.mean()),
        ppl=ppl_from_nll(float(nll_each.sum()), tokens),
        recon=recon,
        kl=kl,
        neg_elbo=recon + kl,
        elbo_ppl=ppl_from_nll(neg_elbo_total, tokens),
        mi=mi,
        au=au,
    )
