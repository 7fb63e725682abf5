"""Probes of the latent space of a trained model.

Codes are posterior means unless stated otherwise.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..data import BOS, EOS
from ..errors import ContractError, UndefinedCorrelationError
from ..model import SeqVae
from .text import EditIndex, corpus_bleu, mean_sentence_bleu, swap_words, word_edit_distance

log = logging.getLogger(__name__)


def words_of(sentence) -> list[int]:
    """Word ids without the sentence markers."""
    return list(sentence[1:-1])


def marked(words) -> list[int]:
    return [BOS, *words, EOS]


def codes(model: SeqVae, sentences, sample_rng: np.random.Generator | None = None) -> np.ndarray:
    post = model.encode_many(sentences)
    if sample_rng is None:
        return post.mu
    return post.mu + post.sigma * sample_rng.standard_normal(post.mu.shape)


# --- reconstruction -----------------------------------------------------------------

def reconstructions(model: SeqVae, sentences, max_len: int = 40) -> list[list[int]]:
    return model.greedy_decode_many(codes(model, sentences), max_len)


def reconstruction_bleu(model: SeqVae, sentences, max_len: int = 40,
                        max_n: int = 4) -> tuple[float, float]:
    """(corpus BLEU, mean sentence BLEU) of greedy reconstructions, percent."""
    if not sentences:
        raise ContractError("empty corpus")
    hyps = reconstructions(model, sentences, max_len)
    refs = [words_of(s) for s in sentences]
    return corpus_bleu(hyps, refs, max_n), mean_sentence_bleu(hyps, refs, max_n)


def clean_reconstruction(model: SeqVae, sentences) -> float:
    """Mean -log p(x | mu(x)) in nats per sentence."""
    if not sentences:
        raise ContractError("empty corpus")
    return float(model.nll_many(sentences, codes(model, sentences)).mean())


def noisy_reconstruction(model: SeqVae, sentences, swaps: int, rng: np.random.Generator,
                         adjacent: bool = False) -> float:
    """Mean -log p(x | mu(x~)) where x~ is x after ``swaps`` word swaps."""
    if swaps < 0:
        raise ContractError("swap count must be nonnegative")
    clean, noisy = [], []
    skipped = 0
    for s in sentences:
        w = words_of(s)
        if swaps > 0 and len(w) < 2:
            skipped += 1
            continue
        clean.append(s)
        noisy.append(marked(swap_words(w, swaps, rng, adjacent)) if swaps else s)
    if skipped:
        log.warning("skipped %d sentences too short to swap", skipped)
    if not clean:
        raise ContractError("no sentence long enough to perturb")
    z = codes(model, noisy)
    return float(model.nll_many(clean, z).mean())


# --- smoothness -------------------------------------------------------------------------

def pearson(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt((xc * xc).sum()), np.sqrt((yc * yc).sum())
    if sx == 0 or sy == 0:
        raise UndefinedCorrelationError("zero variance in a distance list")
    return float(np.clip((xc * yc).sum() / (sx * sy), -1.0, 1.0))


def pcc_from_codes(z: np.ndarray, sentences, num_pairs: int,
                   rng: np.random.Generator) -> float:
    """Pearson r between latent L2 distances and word edit distances over
    ``num_pairs`` pairs drawn with replacement."""
    n = len(sentences)
    if n < 2 or num_pairs < 2:
        raise ContractError("need at least two sentences and two pairs")
    i = rng.integers(0, n, size=num_pairs)
    j = rng.integers(0, n, size=num_pairs)
    lat = np.linalg.norm(z[i] - z[j], axis=1)
    words = [words_of(s) for s in sentences]
    ed = np.array([word_edit_distance(words[a], words[b]) for a, b in zip(i, j)])
    return pearson(lat, ed)


def smoothness_pcc(model: SeqVae, sentences, num_pairs: int, rng: np.random.Generator) -> float:
    return pcc_from_codes(codes(model, sentences), sentences, num_pairs, rng)


# --- decoding from the latent space ---------------------------------------------------

def interpolate(model: SeqVae, z0, z1, steps: int, max_len: int = 40) -> list[list[int]]:
    """Greedy decodes along the segment z0 -> z1 at ``steps`` evenly spaced points."""
    if steps < 2:
        raise ContractError("interpolation needs at least 2 steps")
    z0 = np.asarray(z0, dtype=np.float64).reshape(-1)
    z1 = np.asarray(z1, dtype=np.float64).reshape(-1)
    a = np.arange(steps - 1, -1, -1, dtype=np.float64) / (steps - 1)
    b = np.arange(steps, dtype=np.float64) / (steps - 1)
    # a*z0 + b*z1 with mirrored weights, so swapping endpoints reverses exactly
    zs = a[:, None] * z0[None, :] + b[:, None] * z1[None, :]
    return model.greedy_decode_many(zs, max_len)


@dataclass
class CopyReport:
    mean_distance: float
    mean_train_length: float
    samples: list[list[int]]


def copying_check(model: SeqVae, train_sentences, num_samples: int,
                  rng: np.random.Generator, max_len: int = 40) -> CopyReport:
    """Mean edit distance from prior samples to their nearest training sentence."""
    if num_samples < 1:
        raise ContractError("num_samples must be at least 1")
    train_words = [words_of(s) for s in train_sentences]
    index = EditIndex(train_words)
    z = rng.standard_normal((num_samples, model.dims.latent_dim))
    samples = model.greedy_decode_many(z, max_len)
    dists = [index.nearest(s)[1] for s in samples]
    return CopyReport(float(np.mean(dists)), float(np.mean([len(w) for w in train_words])),
                      samples)
