"""Diagonal Gaussian mixture clustering and a linear softmax classifier
on frozen latent codes."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from ..errors import ContractError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GmmState:
    weights: np.ndarray      # (C,)
    means: np.ndarray        # (C, d)
    variances: np.ndarray    # (C, d) diagonal covariances
    log_likelihoods: list[float] = field(default_factory=list)
    reseeded: int = 0

    @property
    def converged_ll(self) -> float:
        return self.log_likelihoods[-1]


def _component_log_density(x: np.ndarray, state: GmmState) -> np.ndarray:
    """(N, C) log w_c + log N(x_n; m_c, diag v_c)."""
    inv = 1.0 / state.variances
    quad = (x * x) @ inv.T - 2.0 * x @ (state.means * inv).T + (state.means ** 2 * inv).sum(1)
    logdet = np.log(state.variances).sum(axis=1)
    d = x.shape[1]
    return np.log(state.weights)[None, :] - 0.5 * (quad + logdet[None, :] + d * LOG_2PI)


def responsibilities(x: np.ndarray, state: GmmState) -> tuple[np.ndarray, float]:
    """Posterior component probabilities and the total log-likelihood."""
    dens = _component_log_density(x, state)
    norm = logsumexp(dens, axis=1)
    return np.exp(dens - norm[:, None]), float(norm.sum())


def fit_gmm(x: np.ndarray, num_components: int, seed: int, max_iter: int = 200,
            tol: float = 1e-6, var_floor: float = 1e-6) -> GmmState:
    """EM for a diagonal-covariance mixture.

    Stops when the per-datum log-likelihood gain drops below ``tol``. A
    component whose weight falls below 1e-8 is re-seeded at a random datum.
    """
    x = np.asarray(x, dtype=np.float64)
    N, d = x.shape
    C = num_components
    if C < 1 or N < C:
        raise ContractError("need at least as many codes as components")
    rng = np.random.default_rng(seed)
    var0 = np.maximum(x.var(axis=0), var_floor)
    state = GmmState(np.full(C, 1.0 / C), x[rng.choice(N, C, replace=False)].copy(),
                     np.tile(var0, (C, 1)))
    resp, ll = responsibilities(x, state)
    state.log_likelihoods.append(ll)
    for _ in range(max_iter):
        nk = resp.sum(axis=0)
        weights = nk / N
        means = (resp.T @ x) / np.maximum(nk, 1e-300)[:, None]
        var = (resp.T @ (x * x)) / np.maximum(nk, 1e-300)[:, None] - means ** 2
        state.weights, state.means = weights, means
        state.variances = np.maximum(var, var_floor)
        dead = np.flatnonzero(weights < 1e-8)
        if dead.size:
            state.reseeded += dead.size
            state.means[dead] = x[rng.choice(N, dead.size, replace=False)]
            state.variances[dead] = var0
            state.weights = np.maximum(state.weights, 1.0 / N)
            state.weights /= state.weights.sum()
        resp, ll = responsibilities(x, state)
        gain = (ll - state.log_likelihoods[-1]) / N
        state.log_likelihoods.append(ll)
        if abs(gain) < tol:
            break
    return state


def predict(x: np.ndarray, state: GmmState) -> np.ndarray:
    return np.argmax(_component_log_density(np.asarray(x, dtype=np.float64), state), axis=1)


def matched_accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    """Accuracy in percent under the best one-to-one cluster/label matching.

    Exhaustive over permutations up to 8 classes, Hungarian beyond.
    """
    classes = np.unique(labels)
    clusters = np.unique(pred)
    conf = np.zeros((len(clusters), len(classes)))
    ci = {c: i for i, c in enumerate(clusters)}
    li = {c: i for i, c in enumerate(classes)}
    for p, y in zip(pred, labels):
        conf[ci[p], li[y]] += 1
    size = max(conf.shape)
    square = np.zeros((size, size))
    square[:conf.shape[0], :conf.shape[1]] = conf
    if size <= 8:
        best = max(sum(square[i, perm[i]] for i in range(size))
                   for perm in itertools.permutations(range(size)))
    else:
        r, c = linear_sum_assignment(-square)
        best = square[r, c].sum()
    return 100.0 * float(best) / len(labels)


def gmm_cluster(codes: np.ndarray, num_components: int, labels, seed: int,
                **kw) -> tuple[GmmState, float]:
    state = fit_gmm(codes, num_components, seed, **kw)
    return state, matched_accuracy(predict(codes, state), np.asarray(labels))


# --- supervised probe -----------------------------------------------------------------

@dataclass
class LinearClassifier:
    classes: np.ndarray
    weights: np.ndarray   # (d, K)
    bias: np.ndarray      # (K,)
    center: np.ndarray
    scale: float

    def predict(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x, dtype=np.float64) - self.center) / self.scale
        return self.classes[np.argmax(z @ self.weights + self.bias, axis=1)]


def fit_linear(x: np.ndarray, labels, iters: int = 2000, l2: float = 1e-4) -> LinearClassifier:
    """Multinomial logistic regression by full-batch gradient descent.

    Inputs are centred and divided by one global scale, which keeps the fit
    equivariant to rotations of the code space. The step size is the
    inverse of a curvature bound for the softmax loss.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    classes, y = np.unique(labels, return_inverse=True)
    if len(classes) < 2:
        raise ContractError("training subset contains a single class")
    N, d = x.shape
    center = x.mean(axis=0)
    scale = float(np.sqrt(((x - center) ** 2).sum(axis=1).mean())) or 1.0
    z = (x - center) / scale
    K = len(classes)
    onehot = np.eye(K)[y]
    W = np.zeros((d, K))
    b = np.zeros(K)
    lip = 0.5 * (np.linalg.eigvalsh(z.T @ z / N).max() + 1.0) + l2
    step = 1.0 / lip
    for _ in range(iters):
        logits = z @ W + b
        p = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
        g = (p - onehot) / N
        W -= step * (z.T @ g + l2 * W)
        b -= step * g.sum(axis=0)
    return LinearClassifier(classes, W, b, center, scale)


def linear_classify(train_codes, train_labels, test_codes, test_labels,
                    labeled_count: int, **kw) -> float:
    """Test accuracy (percent) of a linear classifier fit on the first
    ``labeled_count`` training codes."""
    if labeled_count > len(train_codes) or labeled_count < 1:
        raise ContractError("labeled_count must be between 1 and the training size")
    clf = fit_linear(np.asarray(train_codes)[:labeled_count],
                     np.asarray(train_labels)[:labeled_count], **kw)
    pred = clf.predict(test_codes)
    return 100.0 * float(np.mean(pred == np.asarray(test_labels)))
