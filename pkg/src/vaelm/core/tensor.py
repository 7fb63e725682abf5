"""Dense tensors with tape-based reverse-mode differentiation.

Operations only record onto a tape while one is active::

    with Tape() as tape:
        loss = F.sum(F.mul(x, x))
    grads = tape.backward(loss)

Outside a tape every op is a plain numpy computation, which is what the
evaluation code relies on.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, DimensionError, NumericError
from . import kernels

DTYPE = np.float64

_TAPES: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(DTYPE)
        if not np.isfinite(arr).all():
            raise NumericError(f"non-finite values in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


class Node:
    __slots__ = ("op", "inputs", "output", "vjp")

    def __init__(self, op, inputs, output, vjp):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended in execution order, so inputs always precede their
    consumers and a single reverse sweep is a valid backward pass.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def record(self, op: str, inputs: tuple, output: Tensor, vjp: Callable) -> None:
        self.nodes.append(Node(op, inputs, output, vjp))

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Propagate d(loss) to every leaf that requires grad.

        Leaf gradients are stored on ``leaf.grad`` (overwritten) and also
        returned keyed by ``id(leaf)``.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        acc: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        produced = set()
        for node in reversed(self.nodes):
            key = id(node.output)
            produced.add(key)
            g = acc.pop(key, None)
            if g is None:
                continue
            grads = node.vjp(g)
            for inp, gi in zip(node.inputs, grads):
                if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                k = id(inp)
                if k in acc:
                    acc[k] = acc[k] + gi
                else:
                    acc[k] = gi
        leaves = {}
        seen = set()
        for node in self.nodes:
            for inp in node.inputs:
                if isinstance(inp, Tensor) and inp.requires_grad and id(inp) not in produced:
                    k = id(inp)
                    if k in seen:
                        continue
                    seen.add(k)
                    g = acc.get(k)
                    if g is None:
                        g = np.zeros_like(inp.data)
                    inp.grad = g
                    leaves[k] = g
        return leaves


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DTYPE))


def _emit(op: str, data: np.ndarray, inputs: tuple, vjp: Callable) -> Tensor:
    if not np.isfinite(data).all():
        raise NumericError(f"{op} produced non-finite values")
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = track
    out.grad = None
    out.name = None
    if track:
        tape.record(op, inputs, out, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _emit("scale", a.data * c, (a,), lambda g: (g * c,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return _emit("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _emit("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)
    return _emit("exp", e, (a,), lambda g: (g * e,))


def expm1(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)
    return _emit("expm1", np.expm1(a.data), (a,), lambda g: (g * e,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if (a.data <= 0).any():
        raise NumericError("log of non-positive value")
    x = a.data
    return _emit("log", np.log(x), (a,), lambda g: (g / x,))


def maximum_const(a, c: float) -> Tensor:
    """max(c, a) elementwise. The subgradient at a == c is 0."""
    a = as_tensor(a)
    passed = a.data > c
    return _emit("max_const", np.where(passed, a.data, c), (a,),
                 lambda g: (g * passed,))


# --- linear algebra / reductions ---------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = g @ bd.T
        gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _emit("matmul", ad @ bd, (a, b), vjp)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum", np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def logsumexp(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    w = e / s
    return _emit("logsumexp", out, (a,), lambda g: (np.expand_dims(g, axis) * w,))


def softmax_cross_entropy(logits, targets, weights=None) -> Tensor:
    """Per-row -log softmax(logits)[target], optionally multiplied by weights.

    ``logits`` is (N, V); ``targets`` an int array (N,). Returns (N,).
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise DimensionError(f"cross entropy: logits {logits.shape}, targets {targets.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(len(targets))
    nll = np.log(s[:, 0]) - z[rows, targets]
    if weights is not None:
        weights = np.asarray(weights, dtype=DTYPE)
        nll = nll * weights

    def vjp(g):
        p = e / s
        p[rows, targets] -= 1.0
        gw = g if weights is None else g * weights
        return (p * gw[:, None],)

    return _emit("softmax_ce", nll, (logits,), vjp)


# --- shape manipulation ------------------------------------------------------

def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _emit("concat", out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: {exc}") from None
    return _emit("reshape", out, (a,), lambda g: (g.reshape(old),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _emit("transpose", np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (g.transpose(inv),))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError as exc:
        raise DimensionError(f"broadcast_to: {exc}") from None
    return _emit("broadcast_to", out, (a,), lambda g: (_unbroadcast(g, old),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, index, g)
        return (full,)

    return _emit("getitem", np.array(a.data[index]), (a,), vjp)


def gather(weight, ids) -> Tensor:
    """Row lookup ``weight[ids]`` (embedding). ``ids`` may have any shape."""
    weight = as_tensor(weight)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise DimensionError(f"gather: ids out of range for {weight.shape[0]} rows")
    n, d = weight.shape

    def vjp(g):
        flat = ids.ravel()
        gw = np.zeros((n, d), dtype=g.dtype)
        gflat = g.reshape(-1, d)
        # per-column bincount beats np.add.at for small vocabularies
        for j in range(d):
            gw[:, j] = np.bincount(flat, weights=gflat[:, j], minlength=n)
        return (gw,)

    return _emit("gather", weight.data[ids], (weight,), vjp)


def dropout(a, mask: np.ndarray | None, rate: float) -> Tensor:
    """Inverted dropout with an explicit keep-mask; identity when mask is None."""
    a = as_tensor(a)
    if mask is None or rate == 0.0:
        return a
    m = mask * (1.0 / (1.0 - rate))
    return _emit("dropout", a.data * m, (a,), lambda g: (g * m,))


def dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray | None:
    if rate <= 0.0:
        return None
    return (rng.random(shape) >= rate).astype(DTYPE)


# --- fused recurrent op ------------------------------------------------------

def lstm_sequence(x, w_x, w_h, b, h0, c0, mask: np.ndarray | None = None) -> Tensor:
    """Run an LSTM over a time-major input (T, B, I).

    Returns the hidden states (T, B, H). Where ``mask[t, b] == 0`` the state
    is carried through unchanged, so the last row holds each sequence's
    state at its final real step. Gate column blocks are ordered
    input, forget, cell, output.
    """
    x, w_x, w_h, b, h0, c0 = (as_tensor(t) for t in (x, w_x, w_h, b, h0, c0))
    T, B, n_in = x.shape
    H = w_h.shape[0]
    if (w_x.shape != (n_in, 4 * H) or w_h.shape != (H, 4 * H) or b.shape != (4 * H,)
            or h0.shape != (B, H) or c0.shape != (B, H)):
        raise DimensionError(
            f"lstm: x{x.shape} w_x{w_x.shape} w_h{w_h.shape} b{b.shape} "
            f"h0{h0.shape} c0{c0.shape}")
    if mask is None:
        mask = np.ones((T, B), dtype=DTYPE)
    else:
        mask = np.ascontiguousarray(mask, dtype=DTYPE)
    xd = x.data.reshape(T * B, n_in)
    xw = np.ascontiguousarray((xd @ w_x.data + b.data).reshape(T, B, 4 * H))
    wh = np.ascontiguousarray(w_h.data)
    hs, cs, gates, tcs = kernels.lstm_forward(
        xw, wh, np.ascontiguousarray(h0.data), np.ascontiguousarray(c0.data), mask)

    def vjp(g):
        dxw, dh0, dc0 = kernels.lstm_backward(
            np.ascontiguousarray(g), wh, cs, gates, tcs, mask)
        dflat = dxw.reshape(T * B, 4 * H)
        dx = (dflat @ w_x.data.T).reshape(T, B, n_in)
        dwx = xd.T @ dflat
        dwh = hs[:-1].reshape(T * B, H).T @ dflat
        db = dflat.sum(axis=0)
        return dx, dwx, dwh, db, dh0, dc0

    return _emit("lstm_sequence", hs[1:], (x, w_x, w_h, b, h0, c0), vjp)


OPS: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "neg": neg,
    "scale": scale,
    "matmul": matmul,
    "concat": concat,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "exp": exp,
    "expm1": expm1,
    "log": log,
    "softmax_cross_entropy": softmax_cross_entropy,
    "sum": sum,
    "mean": mean,
    "logsumexp": logsumexp,
    "maximum_const": maximum_const,
    "gather": gather,
    "dropout": dropout,
    "reshape": reshape,
    "transpose": transpose,
    "broadcast_to": broadcast_to,
    "getitem": getitem,
    "lstm_sequence": lstm_sequence,
}


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    try:
        fn = OPS[kind]
    except KeyError:
        raise ContractError(f"unknown op {kind!r}") from None
    return fn(*inputs, **kwargs)
