"""Corpus loading, vocabulary, synthetic corpora and mini-batching.

Corpus files hold one whitespace-tokenized UTF-8 sentence per line. Label
files, when present, are parallel: one label per line.
"""
from __future__ import annotations

import hashlib
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError

log = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")
SPLITS = ("train", "valid", "test")


class Vocab:
    def __init__(self, words: list[str], min_count: int = 1):
        self.itos = list(RESERVED) + [w for w in words if w not in RESERVED]
        self.stoi = {w: i for i, w in enumerate(self.itos)}
        self.min_count = min_count

    @classmethod
    def build(cls, sentences: list[list[str]], min_count: int = 1) -> "Vocab":
        counts = Counter(w for s in sentences for w in s)
        # first-occurrence order keeps ids stable across runs
        order = {}
        for s in sentences:
            for w in s:
                order.setdefault(w, len(order))
        words = [w for w in order if counts[w] >= min_count]
        return cls(words, min_count)

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, words: list[str]) -> list[int]:
        return [BOS] + [self.stoi.get(w, UNK) for w in words] + [EOS]

    def decode(self, ids) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if i == BOS:
                continue
            if i == EOS:
                break
            out.append(self.itos[i])
        return out

    @property
    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()[:16]


@dataclass
class Corpus:
    vocab: Vocab
    train: list[list[int]]
    valid: list[list[int]]
    test: list[list[int]]
    labels: dict[str, list[str]] = field(default_factory=dict)

    def split(self, name: str) -> list[list[int]]:
        return getattr(self, name)


def read_lines(path) -> list[list[str]]:
    with open(path, encoding="utf-8") as fh:
        return [line.split() for line in fh if line.strip()]


def _read_labels(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def load_corpus(directory=None, *, train=None, valid=None, test=None,
                min_count: int = 1) -> Corpus:
    """Load train/valid/test splits; vocabulary comes from train only.

    Either pass a directory containing ``train.txt``/``valid.txt``/``test.txt``
    (and optionally ``*.labels``) or explicit file paths.
    """
    if directory is not None:
        d = Path(directory)
        train, valid, test = d / "train.txt", d / "valid.txt", d / "test.txt"
    paths = {"train": train, "valid": valid, "test": test}
    raw = {}
    for name, p in paths.items():
        if p is None:
            raise ContractError(f"missing {name} split path")
        raw[name] = read_lines(p)  # FileNotFoundError propagates
    if not raw["train"]:
        raise ContractError("empty train split")
    vocab = Vocab.build(raw["train"], min_count)
    corpus = Corpus(vocab, *(list(map(vocab.encode, raw[s])) for s in SPLITS))
    for name, p in paths.items():
        lp = Path(p).with_suffix(".labels")
        if lp.exists():
            labels = _read_labels(lp)
            if len(labels) != len(raw[name]):
                raise ContractError(f"{lp}: {len(labels)} labels for {len(raw[name])} sentences")
            corpus.labels[name] = labels
    return corpus


# --- synthetic corpus ----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    vocab_size: int = 100
    num_sentences: int = 5000
    num_valid: int = 500
    num_test: int = 500
    min_len: int = 4
    max_len: int = 12
    num_factors: int = 2
    topic_mass: float = 0.8
    concentration: float = 0.1


def synthetic_tables(spec: SyntheticSpec, rng: np.random.Generator):
    """Per-factor bigram tables over word ids 0..V-1 plus a start row.

    The first fifth of the vocabulary is shared; the remainder is split
    into one block per factor. Each row puts ``topic_mass`` on the factor's
    block, so per-factor unigram distributions differ in total variation
    by at least ``topic_mass`` for disjoint blocks.
    """
    V, F = spec.vocab_size, spec.num_factors
    if V < 10:
        raise ContractError("synthetic vocabulary needs at least 10 words")
    n_shared = max(1, V // 5)
    blocks = np.array_split(np.arange(n_shared, V), F)
    shared = np.arange(n_shared)
    tables = np.zeros((F, V + 1, V))
    for f, block in enumerate(blocks):
        for row in range(V + 1):
            tables[f, row, block] = spec.topic_mass * rng.dirichlet(
                np.full(len(block), spec.concentration))
            tables[f, row, shared] = (1 - spec.topic_mass) * rng.dirichlet(
                np.full(len(shared), spec.concentration))
    return tables


def sample_synthetic(spec: SyntheticSpec, seed: int):
    """Returns {split: (sentences as word lists, factor labels)}."""
    rng = np.random.default_rng(seed)
    tables = synthetic_tables(spec, rng)
    V = spec.vocab_size
    words = [f"w{i}" for i in range(V)]
    cdf = np.cumsum(tables, axis=2)
    cdf[..., -1] = 1.0
    out = {}
    for split, n in zip(SPLITS, (spec.num_sentences, spec.num_valid, spec.num_test)):
        factors = rng.integers(0, spec.num_factors, size=n)
        lengths = rng.integers(spec.min_len, spec.max_len + 1, size=n)
        sents = []
        for f, L in zip(factors, lengths):
            prev = V  # start row
            s = []
            for u in rng.random(L):
                w = int(np.searchsorted(cdf[f, prev], u, side="right"))
                w = min(w, V - 1)
                s.append(words[w])
                prev = w
            sents.append(s)
        out[split] = (sents, [str(int(f)) for f in factors])
    return out


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def gen_synthetic(spec: SyntheticSpec, seed: int, out_dir) -> Path:
    """Write ``{train,valid,test}.txt`` and parallel ``.labels`` files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split, (sents, labels) in sample_synthetic(spec, seed).items():
        _atomic_write(out / f"{split}.txt", "".join(" ".join(s) + "\n" for s in sents))
        _atomic_write(out / f"{split}.labels", "".join(l + "\n" for l in labels))
    return out


# --- batching ------------------------------------------------------------------

@dataclass
class Batch:
    """Time-major padded batch.

    ``enc_ids`` holds the full marked sentence; the decoder reads
    ``dec_in`` (all but the last id) and predicts ``dec_out`` (all but the
    first), so every sentence contributes its word count plus one </s>.
    """
    enc_ids: np.ndarray
    enc_mask: np.ndarray
    dec_in: np.ndarray
    dec_out: np.ndarray
    dec_mask: np.ndarray
    n_tokens: np.ndarray

    @property
    def size(self) -> int:
        return self.enc_ids.shape[1]


def make_batch(sentences: list[list[int]], vocab_size: int | None = None) -> Batch:
    if not sentences:
        raise ContractError("empty batch")
    lens = np.array([len(s) for s in sentences])
    if (lens < 3).any():
        raise ContractError("sentence must contain at least one word between markers")
    T = int(lens.max())
    B = len(sentences)
    ids = np.full((T, B), PAD, dtype=np.int64)
    for b, s in enumerate(sentences):
        ids[: len(s), b] = s
    if vocab_size is not None and (ids.min() < 0 or ids.max() >= vocab_size):
        raise ContractError("token id outside the model vocabulary")
    mask = (np.arange(T)[:, None] < lens[None, :]).astype(np.float64)
    return Batch(
        enc_ids=ids,
        enc_mask=mask,
        dec_in=ids[:-1],
        dec_out=ids[1:],
        dec_mask=mask[1:],
        n_tokens=lens - 1,
    )


def iterate_batches(sentences, batch_size: int, rng: np.random.Generator | None = None):
    order = np.arange(len(sentences))
    if rng is not None:
        rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        yield [sentences[i] for i in order[start:start + batch_size]]
