"""Flat ``key = value`` run configuration.

Lines starting with ``#`` are comments; a ``preset = <name>`` line loads
one of the named dimension presets before the remaining keys apply.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .core.layers import ModelDims
from .errors import ConfigError
from .trainer import AggressiveConfig, TrainConfig

# full-scale model sizes; desk-scale defaults live on RunConfig
PRESETS = {
    "ptb": {"embed_dim": 256, "hidden_dim": 256, "latent_dim": 32},
    "snli": {"embed_dim": 128, "hidden_dim": 512, "latent_dim": 32},
    "yahoo": {"embed_dim": 512, "hidden_dim": 1024, "latent_dim": 32},
}


@dataclass
class RunConfig:
    # data
    corpus: str = ""
    min_count: int = 1
    # model
    embed_dim: int = 64
    hidden_dim: int = 128
    latent_dim: int = 32
    dropout: float = 0.5
    # objective
    target_rate: float = 0.0
    iwae_k: int = 10
    linear_epochs: int = 10
    cycles: int = 4
    fb_anneal: int = 0  # 1 ramps the plain fb/fbp recipes like ours
    # optimizer
    batch_size: int = 32
    learning_rate: float = 0.5
    decay_factor: float = 0.5
    patience: int = 2
    max_decays: int = 5
    max_epochs: int = 100
    pretrain_max_epochs: int = 0
    clip_norm: float = 5.0
    aggressive_max_inner: int = 30
    aggressive_inner_patience: int = 5
    # evaluation
    eval_k: int = 10
    eval_mi_size: int = 500
    iw_k: int = 1000
    mi_size: int = 1000
    au_threshold: float = 0.01
    # probes
    pcc_pairs: int = 10000
    pcc_split: str = "test"
    swaps: str = "0,1,2,3,4"
    copy_samples: int = 300
    interp_steps: int = 8
    max_decode_len: int = 40

    def model_dims(self, vocab_size: int) -> ModelDims:
        return ModelDims(vocab_size, self.embed_dim, self.hidden_dim, self.latent_dim)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, learning_rate=self.learning_rate,
            decay_factor=self.decay_factor, patience=self.patience,
            max_decays=self.max_decays, max_epochs=self.max_epochs,
            pretrain_max_epochs=self.pretrain_max_epochs or None,
            clip_norm=self.clip_norm or None, eval_k=self.eval_k,
            eval_mi_size=self.eval_mi_size,
            aggressive=AggressiveConfig(self.aggressive_max_inner,
                                        self.aggressive_inner_patience))

    def swap_counts(self) -> list[int]:
        return [int(s) for s in self.swaps.split(",") if s.strip()]


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value: str):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind}") from None
    return value


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values: dict = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        if key == "preset":
            if value not in PRESETS:
                raise ConfigError(f"{source}:{n}: unknown preset {value!r}")
            values.update(PRESETS[value])
            continue
        if key not in _TYPES:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        values[key] = _coerce(key, value)
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    p = Path(path)
    return parse_config(p.read_text(encoding="utf-8"), str(p))


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(RunConfig))
