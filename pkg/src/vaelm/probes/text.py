"""Sentence-level metrics: BLEU, word edit distance and word swaps."""
from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

import numpy as np

from ..errors import ContractError


def ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _bleu_from_stats(matches, totals, hyp_len, ref_len, max_n, smooth=False) -> float:
    if hyp_len == 0:
        return 0.0
    logs = 0.0
    for n in range(max_n):
        m, t = matches[n], totals[n]
        if smooth and n > 0:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        logs += math.log(m / t)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(logs / max_n)


def corpus_bleu(hypotheses: Sequence[Sequence], references: Sequence[Sequence],
                max_n: int = 4) -> float:
    """Corpus-level BLEU in percent: clipped n-gram counts pooled over all
    pairs, uniform weights, brevity penalty on total lengths, no smoothing."""
    if len(hypotheses) != len(references):
        raise ContractError("hypotheses and references differ in count")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h, r = ngrams(hyp, n), ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(0, len(hyp) - n + 1)
    return _bleu_from_stats(matches, totals, hyp_len, ref_len, max_n)


def sentence_bleu(hyp: Sequence, ref: Sequence, max_n: int = 4) -> float:
    """Single-pair BLEU with add-one smoothing above unigrams; the order is
    capped at the reference length so short sentences can score 100."""
    n_max = max(1, min(max_n, len(ref)))
    matches, totals = [], []
    for n in range(1, n_max + 1):
        h, r = ngrams(hyp, n), ngrams(ref, n)
        matches.append(sum(min(c, r[g]) for g, c in h.items()))
        totals.append(max(0, len(hyp) - n + 1))
    return _bleu_from_stats(matches, totals, len(hyp), len(ref), n_max, smooth=True)


def mean_sentence_bleu(hypotheses, references, max_n: int = 4) -> float:
    if not hypotheses:
        raise ContractError("empty corpus")
    return float(np.mean([sentence_bleu(h, r, max_n) for h, r in zip(hypotheses, references)]))


def word_edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance over words with unit costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, wa in enumerate(a, 1):
        cur = [i]
        for j, wb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (wa != wb)))
        prev = cur
    return prev[-1]


class EditIndex:
    """Edit distances from one sentence to a fixed set, vectorized over the set."""

    def __init__(self, sentences: Sequence[Sequence[int]]):
        if not sentences:
            raise ContractError("empty reference set")
        self.lens = np.array([len(s) for s in sentences])
        L = int(self.lens.max())
        self.tokens = np.full((len(sentences), max(L, 1)), -1, dtype=np.int64)
        for n, s in enumerate(sentences):
            self.tokens[n, :len(s)] = s

    def distances(self, a: Sequence[int]) -> np.ndarray:
        N, L = self.tokens.shape
        prev = np.broadcast_to(np.arange(L + 1), (N, L + 1)).copy()
        for i, w in enumerate(a, 1):
            cur = np.empty_like(prev)
            cur[:, 0] = i
            sub = prev[:, :-1] + (self.tokens != w)
            best = np.minimum(prev[:, 1:] + 1, sub)
            for j in range(1, L + 1):
                cur[:, j] = np.minimum(best[:, j - 1], cur[:, j - 1] + 1)
            prev = cur
        return prev[np.arange(N), self.lens]

    def nearest(self, a: Sequence[int]) -> tuple[int, int]:
        d = self.distances(a)
        i = int(np.argmin(d))
        return i, int(d[i])


def swap_words(words: Sequence, k: int, rng: np.random.Generator,
               adjacent: bool = False) -> list:
    """Apply k transpositions, each of two distinct uniformly random
    positions (or of a random adjacent pair)."""
    out = list(words)
    n = len(out)
    if k > 0 and n < 2:
        raise ContractError("cannot swap words in a sentence shorter than 2")
    for _ in range(k):
        if adjacent:
            i = int(rng.integers(0, n - 1))
            j = i + 1
        else:
            i, j = (int(v) for v in rng.choice(n, size=2, replace=False))
        out[i], out[j] = out[j], out[i]
    return out
