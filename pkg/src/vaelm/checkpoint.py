"""Versioned binary checkpoints.

Layout::

    magic   8 bytes   b"VAELMCK\\x00"
    version u32 LE
    hlen    u32 LE    length of the JSON header
    header  hlen bytes UTF-8 JSON
    payload float64 LE arrays, concatenated in header order

The header records model dims, dropout, vocab hash, recipe, epoch, an RNG
state, the parameter names and shapes, and a SHA-256 of the payload.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core.layers import ModelDims
from .errors import CompatibilityError, FormatError
from .model import SeqVae

MAGIC = b"VAELMCK\x00"
VERSION = 1
_PREFIX = struct.Struct("<8sII")


@dataclass
class Checkpoint:
    model: SeqVae
    vocab_hash: str
    recipe: str = ""
    epoch: int = 0
    rng_state: dict | None = None
    extra: dict = field(default_factory=dict)


def _payload(model: SeqVae) -> tuple[list, bytes]:
    layout, chunks = [], []
    for name, arr in model.arrays().items():
        layout.append([name, list(arr.shape)])
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return layout, b"".join(chunks)


def save_checkpoint(path, model: SeqVae, vocab_hash: str, recipe: str = "", epoch: int = 0,
                    rng_state: dict | None = None, extra: dict | None = None) -> None:
    layout, payload = _payload(model)
    d = model.dims
    header = {
        "dims": {"vocab_size": d.vocab_size, "embed_dim": d.embed_dim,
                 "hidden_dim": d.hidden_dim, "latent_dim": d.latent_dim},
        "dropout": model.dropout,
        "vocab_hash": vocab_hash,
        "recipe": recipe,
        "epoch": epoch,
        "rng_state": rng_state,
        "extra": extra or {},
        "params": layout,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path, vocab_hash: str | None = None,
                    dims: ModelDims | None = None) -> Checkpoint:
    """Read a checkpoint, validating structure, checksum and compatibility.

    Nothing is constructed unless the whole file validates.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: file too short for a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic")
    if version != VERSION:
        raise CompatibilityError(f"{path}: checkpoint version {version}, expected {VERSION}")
    start = _PREFIX.size
    if len(raw) < start + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
        saved_dims = ModelDims(**header["dims"])
        layout = [(str(n), tuple(int(s) for s in shape)) for n, shape in header["params"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from None
    payload = raw[start + hlen:]
    expected = sum(8 * int(np.prod(shape)) for _, shape in layout)
    if len(payload) != expected:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise FormatError(f"{path}: payload checksum mismatch")
    if vocab_hash is not None and header["vocab_hash"] != vocab_hash:
        raise CompatibilityError(
            f"vocabulary hash mismatch: checkpoint {header['vocab_hash']}, corpus {vocab_hash}")
    if dims is not None and dims != saved_dims:
        raise CompatibilityError(f"model dims mismatch: checkpoint {saved_dims}, expected {dims}")
    arrays, off = {}, 0
    for name, shape in layout:
        n = int(np.prod(shape))
        arrays[name] = np.frombuffer(payload, dtype="<f8", count=n, offset=off).reshape(shape).copy()
        off += 8 * n
    model = SeqVae(saved_dims, arrays, header.get("dropout", 0.5))
    return Checkpoint(model, header["vocab_hash"], header.get("recipe", ""),
                      int(header.get("epoch", 0)), header.get("rng_state"),
                      header.get("extra", {}))
