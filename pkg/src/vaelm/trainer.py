"""SGD training loop, learning-rate automaton and the training recipes.

Every run draws its randomness from a ``SeedSequence`` rooted at the seed,
so the same seed, corpus and recipe give bit-identical epoch logs.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .core import tensor as F
from .core.layers import init_decoder
from .data import Corpus, iterate_batches, make_batch
from .errors import ConfigError, ContractError
from .estimators import evaluate, mutual_information
from .model import SeqVae
from .objectives import ObjectiveConfig, ScheduleConfig, compute_objective

log = logging.getLogger(__name__)

RECIPES = ("vanilla", "anneal", "cyclic", "fb", "fbp", "aggressive", "iwae", "ae",
           "pretrain_then_elbo", "pretrain_anneal_elbo", "ours")
PRETRAINED = ("pretrain_then_elbo", "pretrain_anneal_elbo", "ours")


@dataclass
class AggressiveConfig:
    max_inner: int = 30
    inner_patience: int = 5


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 0.5
    decay_factor: float = 0.5
    patience: int = 2
    max_decays: int = 5
    max_epochs: int = 100
    # pretraining phase budget; None means max_epochs
    pretrain_max_epochs: int | None = None
    clip_norm: float | None = 5.0
    # per-epoch validation report
    eval_k: int = 10
    eval_mi_size: int = 500
    aggressive: AggressiveConfig = field(default_factory=AggressiveConfig)

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.eval_k < 1:
            raise ConfigError("batch_size, max_epochs and eval_k must be positive")
        if not 0 < self.decay_factor < 1 or self.learning_rate <= 0:
            raise ConfigError("learning rate settings out of range")


@dataclass
class OptimizerState:
    """Learning-rate decay with patience and an early-stop budget.

    Call ``observe`` once with the validation loss of the initial model and
    then once per epoch.
    """
    initial_rate: float = 0.5
    decay_factor: float = 0.5
    patience: int = 2
    max_decays: int = 5
    decays_so_far: int = 0
    best_val_loss: float = math.inf
    epochs_since_improvement: int = 0

    @property
    def learning_rate(self) -> float:
        return self.initial_rate * self.decay_factor ** self.decays_so_far

    @property
    def exhausted(self) -> bool:
        return self.decays_so_far >= self.max_decays

    def observe(self, val_loss: float) -> str:
        if val_loss < self.best_val_loss:
            self.best_val_loss = val_loss
            self.epochs_since_improvement = 0
            return "improved"
        self.epochs_since_improvement += 1
        if self.epochs_since_improvement > self.patience:
            self.decays_so_far += 1
            self.epochs_since_improvement = 0
            return "decay"
        return "wait"


@dataclass
class TrainRecipe:
    kind: str
    objective: ObjectiveConfig
    aggressive: bool = False
    pretrain: bool = False
    reset_decoder: bool = False

    def __post_init__(self):
        if self.kind not in RECIPES:
            raise ConfigError(f"unknown recipe {self.kind!r}")
        if self.kind == "ours" and not (self.objective.kind == "fb" and self.pretrain
                                        and self.objective.schedule.kind == "linear"):
            raise ConfigError("ours needs the fb objective, linear schedule and pretraining")


def make_recipe(kind: str, target_rate: float = 0.0, iwae_k: int = 10,
                linear_epochs: int = 10, cycles: int = 4,
                fb_anneal: bool = False) -> TrainRecipe:
    """``fb_anneal`` puts the plain fb/fbp baselines on the linear ramp too."""
    const = ScheduleConfig("constant")
    linear = ScheduleConfig("linear", linear_epochs=linear_epochs)
    table = {
        "vanilla": ("elbo", const, {}),
        "anneal": ("elbo", linear, {}),
        "cyclic": ("elbo", ScheduleConfig("cyclic", cycles=cycles), {}),
        "fb": ("fb", linear if fb_anneal else const, {}),
        "fbp": ("fbp", linear if fb_anneal else const, {}),
        "aggressive": ("elbo", const, {"aggressive": True}),
        "iwae": ("iwae", const, {}),
        "ae": ("ae", const, {}),
        "pretrain_then_elbo": ("elbo", const, {"pretrain": True}),
        "pretrain_anneal_elbo": ("elbo", linear, {"pretrain": True}),
        "ours": ("fb", linear, {"pretrain": True, "reset_decoder": True}),
    }
    if kind not in table:
        raise ConfigError(f"unknown recipe {kind!r}")
    obj, sched, flags = table[kind]
    if kind in ("fb", "fbp", "ours") and target_rate <= 0:
        raise ConfigError(f"recipe {kind} needs a positive target rate")
    return TrainRecipe(kind, ObjectiveConfig(obj, target_rate, iwae_k, sched), **flags)


@dataclass
class TrainResult:
    model: SeqVae
    log: list[dict]
    optimizer: OptimizerState
    # copy of the model right after AE pretraining, when the recipe has one
    pretrained: SeqVae | None = None
    # state of the main phase's noise generator when training stopped
    rng_state: dict | None = None


LogFn = Callable[[dict], None]


# --- parameter updates -----------------------------------------------------------------

def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))


def sgd_step(model: SeqVae, tape: F.Tape, loss, lr: float, clip_norm: float | None,
             names: list[str] | None = None) -> float:
    """One plain SGD update of ``names`` (all parameters by default).

    Returns the pre-clipping gradient norm of the updated parameters.
    """
    grads = tape.backward(loss)
    names = model.names() if names is None else names
    zero = np.zeros(0)
    sel = {k: grads.get(id(model.params[k]), zero) for k in names}
    norm = global_norm(sel)
    scale = lr
    if clip_norm and norm > clip_norm:
        scale = lr * clip_norm / norm
    for k, g in sel.items():
        if g.size:
            p = model.params[k]
            p.data = p.data - scale * g
    return norm


def _update(model, sentences, objective, step, rng, spe, lr, clip_norm, names=None):
    with F.Tape() as tape:
        bd = compute_objective(model, make_batch(sentences, model.dims.vocab_size),
                               objective, step, rng, spe)
    sgd_step(model, tape, bd.loss, lr, clip_norm, names)
    return bd


def validation_loss(model: SeqVae, sentences, objective: ObjectiveConfig, seed: int,
                    batch_size: int = 256) -> float:
    """Mean objective at full KL weight, dropout off, fixed noise stream."""
    rng = np.random.default_rng([seed, 7])
    total = 0.0
    for i in range(0, len(sentences), batch_size):
        chunk = sentences[i:i + batch_size]
        bd = compute_objective(model, make_batch(chunk, model.dims.vocab_size), objective,
                               0, rng, train=False, beta=1.0)
        total += bd.objective * len(chunk)
    return total / len(sentences)


# --- main loop -------------------------------------------------------------------------------

class _Phase:
    def __init__(self, model: SeqVae, corpus: Corpus, objective: ObjectiveConfig,
                 config: TrainConfig, seq: np.random.SeedSequence, name: str,
                 max_epochs: int, aggressive: bool, log_fn: LogFn | None,
                 records: list[dict], epoch_offset: int):
        self.model, self.corpus, self.config = model, corpus, config
        self.name, self.max_epochs, self.aggressive = name, max_epochs, aggressive
        self.log_fn, self.records, self.epoch_offset = log_fn, records, epoch_offset
        self.spe = max(1, math.ceil(len(corpus.train) / config.batch_size))
        if objective.schedule.kind == "cyclic" and objective.schedule.total_steps is None:
            objective = replace(objective, schedule=replace(
                objective.schedule, total_steps=max_epochs * self.spe))
        self.objective = objective
        s_shuffle, s_noise, s_eval = seq.spawn(3)
        self.shuffle_rng = np.random.default_rng(s_shuffle)
        self.noise_rng = np.random.default_rng(s_noise)
        self.eval_seed = int(s_eval.generate_state(1)[0])

    def emit(self, record: dict) -> None:
        self.records.append(record)
        if self.log_fn is not None:
            self.log_fn(record)

    def report(self, **extra) -> dict:
        c = self.config
        rep = evaluate(self.model, self.corpus.valid, k=c.eval_k, seed=self.eval_seed,
                       mi_size=c.eval_mi_size)
        return {"phase": self.name, **extra, **rep.to_dict()}

    def run(self) -> OptimizerState:
        c, model = self.config, self.model
        opt = OptimizerState(c.learning_rate, c.decay_factor, c.patience, c.max_decays)
        opt.observe(validation_loss(model, self.corpus.valid, self.objective, self.eval_seed))
        best = {k: v.copy() for k, v in model.arrays().items()}
        step = 0
        best_mi = -math.inf
        for epoch in range(1, self.max_epochs + 1):
            lr = opt.learning_rate
            train_total, n_seen = 0.0, 0
            beta = 0.0
            for sents in iterate_batches(self.corpus.train, c.batch_size, self.shuffle_rng):
                if self.aggressive:
                    self._inner_encoder_loop(sents, step, lr)
                    names = model.names("decoder")
                else:
                    names = None
                bd = _update(model, sents, self.objective, step, self.noise_rng, self.spe,
                             lr, c.clip_norm, names)
                train_total += bd.objective * len(sents)
                n_seen += len(sents)
                beta = bd.beta
                step += 1
            val = validation_loss(model, self.corpus.valid, self.objective, self.eval_seed)
            event = opt.observe(val)
            if event == "improved":
                best = {k: v.copy() for k, v in model.arrays().items()}
            record = self.report(epoch=self.epoch_offset + epoch, step=step, lr=lr,
                                 beta=beta, train_loss=train_total / n_seen, val_loss=val,
                                 lr_event=event, aggressive=self.aggressive)
            self.emit(record)
            log.info("%s epoch %d val %.4f kl %.3f au %d", self.name, epoch, val,
                     record["kl"], record["au"])
            if self.aggressive:
                mi = mutual_information(model, self.corpus.valid[:c.eval_mi_size],
                                        np.random.default_rng([self.eval_seed, epoch]))
                if mi <= best_mi:
                    self.aggressive = False
                best_mi = max(best_mi, mi)
            if opt.exhausted:
                break
        self.last_epoch = self.epoch_offset + epoch
        model.load_arrays(best)
        return opt

    def _inner_encoder_loop(self, sents, step, lr) -> None:
        ac = self.config.aggressive
        enc = self.model.names("encoder")
        best, bad = math.inf, 0
        for _ in range(ac.max_inner):
            bd = _update(self.model, sents, self.objective, step, self.noise_rng, self.spe,
                         lr, self.config.clip_norm, enc)
            if bd.objective < best:
                best, bad = bd.objective, 0
            else:
                bad += 1
                if bad >= ac.inner_patience:
                    break


def _check_corpus(corpus: Corpus) -> None:
    if not corpus.train or not corpus.valid:
        raise ContractError("corpus needs nonempty train and valid splits")


def _run_phase(model, corpus, objective, config, seq, name, max_epochs, aggressive,
               log_fn, records, offset):
    phase = _Phase(model, corpus, objective, config, seq, name, max_epochs, aggressive,
                   log_fn, records, offset)
    opt = phase.run()
    return phase, opt


def pretrain_encoder(model: SeqVae, corpus: Corpus, seed: int,
                     config: TrainConfig | None = None, log_fn: LogFn | None = None,
                     records: list[dict] | None = None) -> SeqVae:
    """Train encoder and decoder under the AE objective (same optimizer rules)."""
    config = config or TrainConfig()
    _check_corpus(corpus)
    records = [] if records is None else records
    seq = np.random.SeedSequence([seed, 1])
    _run_phase(model, corpus, ObjectiveConfig("ae"), config, seq, "pretrain",
               config.pretrain_max_epochs or config.max_epochs, False, log_fn, records, 0)
    return model


def train(model: SeqVae, corpus: Corpus, recipe: TrainRecipe | str, seed: int,
          config: TrainConfig | None = None, log_fn: LogFn | None = None,
          target_rate: float = 0.0, pretrained: SeqVae | None = None) -> TrainResult:
    """Run ``recipe`` on ``corpus`` and return the best-validation model and its log.

    For recipes with AE pretraining, ``pretrained`` may supply the result of
    an earlier ``pretrain_encoder`` run with the same seed and config; its
    parameters are loaded instead of repeating that phase.
    """
    config = config or TrainConfig()
    if isinstance(recipe, str):
        recipe = make_recipe(recipe, target_rate)
    _check_corpus(corpus)
    records: list[dict] = []
    offset = 0
    snapshot = None
    if recipe.pretrain:
        if pretrained is None:
            pretrain_encoder(model, corpus, seed, config, log_fn, records)
            offset = records[-1]["epoch"] if records else 0
        else:
            model.load_arrays({k: v.copy() for k, v in pretrained.arrays().items()})
        snapshot = model.copy()
        if recipe.reset_decoder:
            rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
            model.load_arrays(init_decoder(rng, model.dims))
            rep = evaluate(model, corpus.valid, k=config.eval_k, seed=seed,
                           mi_size=config.eval_mi_size)
            record = {"phase": "reset", "event": "decoder_reset", "epoch": offset,
                      **rep.to_dict()}
            records.append(record)
            if log_fn is not None:
                log_fn(record)
    seq = np.random.SeedSequence([seed, 3])
    phase, opt = _run_phase(model, corpus, recipe.objective, config, seq, "main",
                            config.max_epochs, recipe.aggressive, log_fn, records, offset)
    return TrainResult(model, records, opt, snapshot, phase.noise_rng.bit_generator.state)


def aggressive_train(model: SeqVae, corpus: Corpus, seed: int,
                     config: TrainConfig | None = None, log_fn: LogFn | None = None) -> SeqVae:
    return train(model, corpus, make_recipe("aggressive"), seed, config, log_fn).model


def run_ours(model: SeqVae, corpus: Corpus, target_rate: float, seed: int,
             config: TrainConfig | None = None, log_fn: LogFn | None = None,
             reset: bool = True, pretrained: SeqVae | None = None) -> TrainResult:
    """AE pretraining, decoder re-initialization, then annealed free bits.

    With ``target_rate=0`` and ``reset=False`` the hinge is inactive and the
    run is pretraining followed by annealed ELBO training.
    """
    if target_rate < 0 or (reset and target_rate == 0):
        raise ConfigError("target rate must be positive")
    recipe = TrainRecipe("ours", ObjectiveConfig("fb", target_rate, schedule=ScheduleConfig("linear")),
                         pretrain=True, reset_decoder=reset)
    return train(model, corpus, recipe, seed, config, log_fn, pretrained=pretrained)
