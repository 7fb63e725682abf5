"""Latent-space probes and their JSON report."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .cluster import GmmState, fit_gmm, gmm_cluster, linear_classify, matched_accuracy
from .latent import (clean_reconstruction, codes, copying_check, interpolate,
                     noisy_reconstruction, reconstruction_bleu, smoothness_pcc)
from .text import corpus_bleu, sentence_bleu, word_edit_distance


@dataclass
class ProbeReport:
    bleu: float | None = None
    bleu_sentence: float | None = None
    pcc: float | None = None
    noisy_recon: dict[str, float] = field(default_factory=dict)
    copy_edit_distance: float | None = None
    copy_train_length: float | None = None
    cluster_accuracy: float | None = None
    classifier_accuracy: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


__all__ = [
    "GmmState", "ProbeReport", "clean_reconstruction", "codes", "copying_check",
    "corpus_bleu", "fit_gmm", "gmm_cluster", "interpolate", "linear_classify",
    "matched_accuracy", "noisy_reconstruction", "reconstruction_bleu", "sentence_bleu",
    "smoothness_pcc", "word_edit_distance",
]
