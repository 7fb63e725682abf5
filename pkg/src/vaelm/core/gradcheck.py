"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for e in self.errors.values())

    @property
    def worst(self) -> float:
        return max(self.errors.values(), default=0.0)

    def failures(self) -> list[str]:
        return [k for k, e in self.errors.items() if e > self.tolerance]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Block relative error ||a - n|| / max(||a||, ||n||); 0 when both vanish."""
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if den < 1e-300:
        return 0.0
    return float(num / den)


def analytic_grads(fn: Callable[[dict], Tensor], params: dict[str, np.ndarray]):
    tensors = {k: Tensor(v.copy(), requires_grad=True) for k, v in params.items()}
    with Tape() as tape:
        loss = fn(tensors)
    tape.backward(loss)
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for k, t in tensors.items()}


def numeric_grads(fn, params, h=1e-5, coords: dict | None = None):
    """Central differences; ``coords`` optionally restricts each block to
    a subset of flat indices."""
    out = {}
    work = {k: v.copy() for k, v in params.items()}

    def value():
        return float(fn({k: Tensor(v) for k, v in work.items()}).data)

    for name, arr in work.items():
        flat = arr.reshape(-1)
        idx = range(flat.size) if coords is None else coords[name]
        g = np.zeros(len(idx))
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            up = value()
            flat[i] = orig - h
            down = value()
            flat[i] = orig
            g[n] = (up - down) / (2 * h)
        out[name] = g
    return out


def grad_check(fn: Callable[[dict], Tensor], params: dict[str, np.ndarray],
               tolerance: float = 1e-4, h: float = 1e-5, max_coords: int | None = None,
               rng: np.random.Generator | None = None,
               grad_transform: Callable | None = None) -> GradCheckReport:
    """Compare backward() against central differences, block by block.

    ``fn`` maps a dict of Tensors to a scalar Tensor. ``max_coords`` limits
    each block to a random subset of coordinates. ``grad_transform`` is
    applied to analytic gradients before comparison (negative controls).
    """
    analytic = analytic_grads(fn, params)
    if grad_transform is not None:
        analytic = {k: grad_transform(v) for k, v in analytic.items()}
    coords = None
    if max_coords is not None:
        rng = rng or np.random.default_rng(0)
        coords = {}
        for k, v in params.items():
            n = v.size
            coords[k] = (np.arange(n) if n <= max_coords
                         else np.sort(rng.choice(n, size=max_coords, replace=False)))
    numeric = numeric_grads(fn, params, h=h, coords=coords)
    report = GradCheckReport(tolerance)
    for k in params:
        a = analytic[k].reshape(-1)
        if coords is not None:
            a = a[coords[k]]
        report.errors[k] = relative_error(a, numeric[k])
    return report
