"""Training objectives and KL-weight schedules.

Every objective is a per-sentence quantity summed over tokens and averaged
over the batch. KL terms are averaged over the batch per latent dimension
before any hinge is applied, so free bits act on the batch-level rate of
each dimension.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import tensor as F
from .core.tensor import Tensor
from .data import Batch
from .errors import ConfigError, ContractError
from .model import LOG_2PI, SeqVae, kl_terms, log_normal_std, repeat_batch

OBJECTIVES = ("elbo", "fb", "fbp", "ae", "iwae")
SCHEDULES = ("constant", "linear", "cyclic")


@dataclass
class ScheduleConfig:
    kind: str = "constant"
    linear_epochs: int = 10
    cycles: int = 4
    ratio: float = 0.5
    total_steps: int | None = None

    def __post_init__(self):
        if self.kind not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.kind!r}")
        if self.linear_epochs <= 0 or self.cycles <= 0 or not 0 < self.ratio <= 1:
            raise ConfigError("schedule parameters out of range")


@dataclass
class ObjectiveConfig:
    kind: str = "elbo"
    target_rate: float = 0.0
    iwae_k: int = 10
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    # AE only: use a sampled z instead of the posterior mean
    ae_sample: bool = False

    def __post_init__(self):
        if self.kind not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.kind!r}")
        if self.target_rate < 0:
            raise ConfigError("target rate must be nonnegative")
        if self.iwae_k < 1:
            raise ConfigError("iwae_k must be at least 1")


@dataclass
class LossBreakdown:
    recon_nll: float
    kl_per_dim: np.ndarray
    kl_total: float
    hinged_kl: float
    beta: float
    objective: float
    loss: Tensor | None = None


def anneal_weight(schedule: ScheduleConfig, step: int, steps_per_epoch: int) -> float:
    """KL weight at optimizer step ``step`` (0-based)."""
    if step < 0:
        raise ContractError("step must be nonnegative")
    if schedule.kind == "constant":
        return 1.0
    if schedule.kind == "linear":
        return min(1.0, step / (schedule.linear_epochs * steps_per_epoch))
    total = schedule.total_steps
    if not total:
        raise ConfigError("cyclic schedule needs total_steps")
    period = total / schedule.cycles
    tau = (step % period) / period
    return min(1.0, tau / schedule.ratio)


def free_bits_hinge(kl_per_dim, target_rate: float) -> Tensor:
    """sum_i max(target_rate, kl_i)."""
    if target_rate < 0:
        raise ConfigError("target rate must be nonnegative")
    return F.sum(F.maximum_const(kl_per_dim, target_rate))


def fbp_hinge(kl_total, target_rate: float) -> Tensor:
    """max(target_rate, kl_total) on the whole KL."""
    if target_rate < 0:
        raise ConfigError("target rate must be nonnegative")
    return F.maximum_const(kl_total, target_rate)


def sample_latent(mu: Tensor, log_var: Tensor, eps: np.ndarray) -> Tensor:
    return F.add(mu, F.mul(F.exp(F.scale(log_var, 0.5)), eps))


def iw_log_weights(model: SeqVae, batch: Batch, eps: np.ndarray,
                   posterior: tuple[Tensor, Tensor] | None = None) -> Tensor:
    """log p(x|z_j) + log p(z_j) - log q(z_j|x) as a (B, k) tensor.

    ``eps`` has shape (B, k, d); z_j = mu + sigma * eps_j.
    """
    B, k, d = eps.shape
    mu, log_var = posterior if posterior is not None else model.posterior_t(batch)
    mu_k = F.reshape(F.broadcast_to(F.reshape(mu, (B, 1, d)), (B, k, d)), (B * k, d))
    lv_k = F.reshape(F.broadcast_to(F.reshape(log_var, (B, 1, d)), (B, k, d)), (B * k, d))
    e = eps.reshape(B * k, d)
    z = sample_latent(mu_k, lv_k, e)
    log_px = F.neg(model.decoder_nll_t(repeat_batch(batch, k), z))
    log_pz = log_normal_std(z)
    # log q(z|x) with (z - mu) / sigma == eps
    log_qz = F.scale(F.add(F.sum(lv_k, axis=-1), np.sum(e * e, axis=-1) + d * LOG_2PI), -0.5)
    return F.reshape(F.sub(F.add(log_px, log_pz), log_qz), (B, k))


def iwae_bound(log_w: Tensor) -> Tensor:
    """-log mean_j exp(log_w[:, j]) per row."""
    k = log_w.shape[1]
    return F.neg(F.sub(F.logsumexp(log_w, axis=1), math.log(k)))


def iwae_objective(model: SeqVae, batch: Batch, k: int, rng: np.random.Generator) -> Tensor:
    """Per-sentence negative IWAE bound with k importance samples, shape (B,)."""
    if k < 1:
        raise ConfigError("k must be at least 1")
    eps = rng.standard_normal((batch.size, k, model.dims.latent_dim))
    return iwae_bound(iw_log_weights(model, batch, eps))


def compute_objective(model: SeqVae, batch: Batch, config: ObjectiveConfig, step: int,
                      rng: np.random.Generator, steps_per_epoch: int = 1,
                      train: bool = True, beta: float | None = None) -> LossBreakdown:
    """Loss for one batch. ``beta`` overrides the schedule when given.

    With ``train=False`` dropout is off; ``rng`` still drives latent noise.
    """
    if batch.size == 0:
        raise ContractError("empty batch")
    if beta is None:
        beta = anneal_weight(config.schedule, step, steps_per_epoch)
    dropout_rng = rng if train else None
    mu, log_var = model.posterior_t(batch)
    kl = kl_terms(mu, log_var)
    kl_dim = F.mean(kl, axis=0)
    kl_total = F.sum(kl_dim)

    if config.kind == "iwae":
        eps = rng.standard_normal((batch.size, config.iwae_k, model.dims.latent_dim))
        log_w = iw_log_weights(model, batch, eps, posterior=(mu, log_var))
        loss = F.mean(iwae_bound(log_w))
        # recon reported at the first importance sample
        z0 = sample_latent(mu, log_var, eps[:, 0, :])
        recon = F.mean(model.decoder_nll_t(batch, z0))
        hinged = kl_total
    else:
        if config.kind == "ae" and not config.ae_sample:
            z = mu
        else:
            z = sample_latent(mu, log_var, rng.standard_normal(mu.shape))
        recon = F.mean(model.decoder_nll_t(batch, z, rng=dropout_rng))
        if config.kind == "ae":
            hinged = kl_total
            loss = recon
        elif config.kind == "elbo":
            hinged = kl_total
            loss = F.add(recon, F.scale(kl_total, beta))
        elif config.kind == "fb":
            hinged = free_bits_hinge(kl_dim, config.target_rate)
            loss = F.add(recon, F.scale(hinged, beta))
        else:  # fbp
            hinged = fbp_hinge(kl_total, config.target_rate)
            loss = F.add(recon, F.scale(hinged, beta))
    return LossBreakdown(
        recon_nll=float(recon.data),
        kl_per_dim=kl_dim.data.copy(),
        kl_total=float(kl_total.data),
        hinged_kl=float(hinged.data),
        beta=float(beta),
        objective=float(loss.data),
        loss=loss,
    )
