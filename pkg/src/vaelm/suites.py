"""Self-check suites behind the ``grad-check`` and ``oracle-check`` commands."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import tensor as F
from .core.gradcheck import grad_check
from .core.layers import ModelDims, lstm_step
from .data import Corpus, SyntheticSpec, Vocab, make_batch, sample_synthetic
from .errors import ContractError
from .estimators import iw_nll_many, quadrature_log_marginal
from .model import SeqVae
from .objectives import ObjectiveConfig, compute_objective

# --- gradient suite -----------------------------------------------------------------------


def _randn(rng, *shape):
    return rng.standard_normal(shape)


def _project(out, rng_seed: int):
    """Scalar sum(out * R) with a fixed random R, so every output entry matters."""
    r = np.random.default_rng(rng_seed).standard_normal(out.shape)
    return F.sum(F.mul(out, r))


def _op_case(kind: str, rng: np.random.Generator):
    """(params, fn) for one random instance of a registered op."""
    seed = int(rng.integers(1 << 31))
    n, m, k = (int(v) for v in rng.integers(2, 5, size=3))

    def unary(op, low=None):
        a = rng.uniform(low, 2.0, (n, m)) if low is not None else _randn(rng, n, m)
        return {"a": a}, lambda p: _project(op(p["a"]), seed)

    if kind in ("add", "sub", "mul"):
        op = getattr(F, kind)
        b_shape = [(n, m), (m,), (1, m), (n, 1)][int(rng.integers(4))]
        return ({"a": _randn(rng, n, m), "b": rng.standard_normal(b_shape)},
                lambda p: _project(op(p["a"], p["b"]), seed))
    if kind == "neg":
        return unary(F.neg)
    if kind == "scale":
        c = float(rng.normal())
        return unary(lambda a: F.scale(a, c))
    if kind in ("sigmoid", "tanh", "exp", "expm1"):
        return unary(getattr(F, kind))
    if kind == "log":
        return unary(F.log, low=0.3)
    if kind == "maximum_const":
        c = float(rng.normal())
        a = _randn(rng, n, m)
        a = np.where(np.abs(a - c) < 1e-2, a + 0.05, a)
        return {"a": a}, lambda p: _project(F.maximum_const(p["a"], c), seed)
    if kind == "matmul":
        a_shape = (n, k) if rng.random() < 0.5 else (2, n, k)
        return ({"a": rng.standard_normal(a_shape), "b": _randn(rng, k, m)},
                lambda p: _project(F.matmul(p["a"], p["b"]), seed))
    if kind == "concat":
        axis = int(rng.integers(0, 2))
        b_shape = (k, m) if axis == 0 else (n, k)
        return ({"a": _randn(rng, n, m), "b": rng.standard_normal(b_shape)},
                lambda p: _project(F.concat([p["a"], p["b"]], axis=axis), seed))
    if kind == "softmax_cross_entropy":
        t = rng.integers(0, m, size=n)
        w = rng.uniform(0.0, 1.0, size=n)
        return ({"a": _randn(rng, n, m)},
                lambda p: _project(F.softmax_cross_entropy(p["a"], t, w), seed))
    if kind in ("sum", "mean"):
        axis = [None, 0, 1][int(rng.integers(3))]
        op = getattr(F, kind)
        return unary(lambda a: F.reshape(op(a, axis=axis), (-1,)))
    if kind == "logsumexp":
        axis = int(rng.integers(0, 2))
        return unary(lambda a: F.logsumexp(a, axis=axis))
    if kind == "gather":
        ids = rng.integers(0, n, size=(k, 2))
        return ({"w": _randn(rng, n, m)}, lambda p: _project(F.gather(p["w"], ids), seed))
    if kind == "dropout":
        rate = float(rng.uniform(0.1, 0.7))
        mask = F.dropout_mask(rng, (n, m), rate)
        return unary(lambda a: F.dropout(a, mask, rate))
    if kind == "reshape":
        return unary(lambda a: F.reshape(a, (m, n)))
    if kind == "transpose":
        return {"a": _randn(rng, n, m, k)}, lambda p: _project(F.transpose(p["a"], (2, 0, 1)), seed)
    if kind == "broadcast_to":
        return {"a": _randn(rng, 1, m)}, lambda p: _project(F.broadcast_to(p["a"], (n, m)), seed)
    if kind == "getitem":
        idx = [(slice(1, None),), (Ellipsis, 0), (np.array([0, 1, 0]),)][int(rng.integers(3))]
        return unary(lambda a: F.getitem(a, idx))
    if kind == "lstm_sequence":
        T, B, I, H = int(rng.integers(1, 5)), 2, k, int(rng.integers(2, 4))
        lens = rng.integers(1, T + 1, size=B)
        mask = (np.arange(T)[:, None] < lens[None, :]).astype(float)
        params = {"x": _randn(rng, T, B, I), "w_x": 0.5 * _randn(rng, I, 4 * H),
                  "w_h": 0.5 * _randn(rng, H, 4 * H), "b": 0.5 * _randn(rng, 4 * H),
                  "h0": 0.5 * _randn(rng, B, H), "c0": 0.5 * _randn(rng, B, H)}
        return params, lambda p: _project(F.lstm_sequence(
            p["x"], p["w_x"], p["w_h"], p["b"], p["h0"], p["c0"], mask), seed)
    raise ContractError(f"no gradient case generator for op {kind!r}")


def _lstm_step_case(rng):
    seed = int(rng.integers(1 << 31))
    B, I, H = 2, int(rng.integers(2, 5)), int(rng.integers(2, 5))
    params = {"w_x": 0.5 * _randn(rng, I, 4 * H), "w_h": 0.5 * _randn(rng, H, 4 * H),
              "b": 0.5 * _randn(rng, 4 * H), "x": _randn(rng, B, I),
              "h": 0.5 * _randn(rng, B, H), "c": 0.5 * _randn(rng, B, H)}

    def fn(p):
        h, (_, c) = lstm_step(p["w_x"], p["w_h"], p["b"], p["x"], p["h"], p["c"])
        return F.add(_project(h, seed), _project(c, seed + 1))
    return params, fn


TINY_DIMS = ModelDims(vocab_size=12, embed_dim=5, hidden_dim=6, latent_dim=4)


def _loss_case(kind: str, rng: np.random.Generator):
    """Full objective on a random tiny model and a two-sentence batch.

    Parameters are drawn at a larger scale than training init so every
    block has gradients well above finite-difference noise.
    """
    base = SeqVae.create(TINY_DIMS, seed=int(rng.integers(1 << 31)), dropout=0.3)
    params = {k: rng.uniform(-0.5, 0.5, v.shape) for k, v in base.arrays().items()}
    sents = [[1, *rng.integers(4, 12, size=int(rng.integers(1, 5))), 2] for _ in range(2)]
    batch = make_batch(sents, TINY_DIMS.vocab_size)
    noise_seed = int(rng.integers(1 << 31))
    target = float(rng.uniform(0.05, 0.5))
    cfg = ObjectiveConfig(kind, target_rate=target if kind in ("fb", "fbp") else 0.0, iwae_k=3)
    model = SeqVae(TINY_DIMS, params, dropout=0.3)

    def fn(p):
        model.params = p
        bd = compute_objective(model, batch, cfg, 0, np.random.default_rng(noise_seed))
        return bd.loss
    return params, fn


LOSS_KINDS = ("elbo", "fb", "fbp", "iwae", "ae")


@dataclass
class SuiteResult:
    name: str
    cases: int
    worst: float
    failures: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.failures == 0


def run_grad_suite(cases: int = 100, seed: int = 0, tolerance: float = 1e-4,
                   loss_coords: int = 3, progress: Callable[[str], None] | None = None
                   ) -> list[SuiteResult]:
    """Central-difference checks for every registered op, the composed LSTM
    step and each full training objective."""
    targets: list[tuple[str, Callable]] = [(k, lambda r, k=k: _op_case(k, r)) for k in F.OPS]
    targets.append(("lstm_step", _lstm_step_case))
    targets += [(f"loss:{k}", lambda r, k=k: _loss_case(k, r)) for k in LOSS_KINDS]
    results = []
    for name, make in targets:
        t0 = time.perf_counter()
        rng = np.random.default_rng([seed, sum(map(ord, name))])
        worst, failures = 0.0, 0
        for _ in range(cases):
            params, fn = make(rng)
            coords = loss_coords if name.startswith("loss:") else None
            rep = grad_check(fn, params, tolerance=tolerance, max_coords=coords, rng=rng)
            worst = max(worst, rep.worst)
            failures += not rep.passed
        res = SuiteResult(name, cases, worst, failures, time.perf_counter() - t0)
        results.append(res)
        if progress:
            progress(f"{'PASS' if res.passed else 'FAIL'} {name}: worst rel err "
                     f"{res.worst:.2e} over {cases} cases")
    return results


# --- marginal-likelihood oracle suite -----------------------------------------------------

ORACLE_SPEC = SyntheticSpec(vocab_size=10, num_sentences=2000, num_valid=200, num_test=200,
                            min_len=1, max_len=4, num_factors=2, topic_mass=0.9,
                            concentration=0.5)


def oracle_corpus(seed: int = 0, spec: SyntheticSpec = ORACLE_SPEC) -> Corpus:
    """Short-sentence corpus held in memory (no files)."""
    raw = sample_synthetic(spec, seed)
    vocab = Vocab.build(raw["train"][0])
    enc = {s: [vocab.encode(w) for w in raw[s][0]] for s in raw}
    return Corpus(vocab, enc["train"], enc["valid"], enc["test"],
                  {s: raw[s][1] for s in raw})


def oracle_dims(vocab_size: int, latent_dim: int = 1) -> ModelDims:
    return ModelDims(vocab_size, embed_dim=8, hidden_dim=16, latent_dim=latent_dim)


@dataclass
class OracleCheck:
    mean_abs_error: float
    iw_by_k: dict[int, float]
    quadrature_nll: float
    seconds: float
    per_sentence_error: list[float] = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        vals = [self.iw_by_k[k] for k in sorted(self.iw_by_k)]
        return all(b <= a for a, b in zip(vals, vals[1:]))

    def passed(self, tol: float = 0.05) -> bool:
        return self.mean_abs_error <= tol and self.monotone


def oracle_check(model: SeqVae, sentences, k: int = 1000, ks=(1, 8, 64), seed: int = 0,
                 order: int = 64) -> OracleCheck:
    """Compare iw_nll against Gauss-Hermite quadrature on ``sentences`` and
    evaluate the mean IW estimate at nested sample counts ``ks``."""
    t0 = time.perf_counter()
    truth = np.array([-quadrature_log_marginal(model, s, order) for s in sentences])
    est = iw_nll_many(model, sentences, k, seed)
    err = np.abs(est - truth)
    # per-sentence streams make the k samples a prefix of the larger draws
    by_k = {kk: float(iw_nll_many(model, sentences, kk, seed + 1).mean()) for kk in ks}
    return OracleCheck(float(err.mean()), by_k, float(truth.mean()),
                       time.perf_counter() - t0, err.tolist())


def train_oracle_model(corpus: Corpus, recipe: str = "fb", target_rate: float = 1.0,
                       seed: int = 0, max_epochs: int = 15, latent_dim: int = 1,
                       **recipe_kw) -> SeqVae:
    from .trainer import TrainConfig, make_recipe, train

    model = SeqVae.create(oracle_dims(len(corpus.vocab), latent_dim), seed)
    cfg = TrainConfig(max_epochs=max_epochs, eval_k=5, eval_mi_size=200)
    rec = make_recipe(recipe, target_rate, **recipe_kw)
    return train(model, corpus, rec, seed, cfg).model


def mean_neg_elbo(model: SeqVae, sentences, samples: int = 64, seed: int = 0) -> float:
    """Per-sentence -ELBO: analytic KL plus a many-sample reconstruction term."""
    from .model import kl_to_prior

    post = model.encode_many(sentences)
    _, kl = kl_to_prior(post)
    rng = np.random.default_rng(seed)
    rec = np.zeros(len(sentences))
    for _ in range(samples):
        z = post.mu + post.sigma * rng.standard_normal(post.mu.shape)
        rec += model.nll_many(sentences, z)
    return float((rec / samples + kl).mean())


def quadrature_nll(model: SeqVae, sentences, order: int = 64) -> float:
    return float(np.mean([-quadrature_log_marginal(model, s, order) for s in sentences]))


def mc_kl_check(mu: np.ndarray, log_var: np.ndarray, samples: int, rng: np.random.Generator):
    """Monte Carlo KL(q || N(0, I)) and its standard error for one diagonal q."""
    d = mu.shape[0]
    sigma = np.exp(0.5 * log_var)
    total = np.zeros(samples)
    chunk = 200_000
    for s in range(0, samples, chunk):
        eps = rng.standard_normal((min(chunk, samples - s), d))
        z = mu + sigma * eps
        log_q = -0.5 * (eps * eps + log_var + math.log(2 * math.pi)).sum(axis=1)
        log_p = -0.5 * (z * z + math.log(2 * math.pi)).sum(axis=1)
        total[s:s + len(eps)] = log_q - log_p
    return float(total.mean()), float(total.std(ddof=1) / math.sqrt(samples))
