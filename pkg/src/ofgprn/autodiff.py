"""Reverse-mode differentiation over dense numpy arrays.

Forward operations record a DAG of Tensor nodes; ``backward`` replays it
in reverse topological order and accumulates gradients into every
parameter that influenced the loss.  Parameters that never touched the
loss keep a zero gradient.  Everything is float64 and deterministic:
max-pool ties route their gradient to the lowest row index.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

__all__ = [
    "Tensor",
    "ParamStore",
    "constant",
    "add",
    "mul",
    "matmul",
    "relu",
    "sigmoid",
    "softmax",
    "standardize",
    "max_over_rows",
    "concat",
    "slice_rows",
    "mean_all",
    "backward",
    "save_params",
    "load_params",
]

CHECKPOINT_MAGIC = b"OFGP0001"


class Tensor:
    """A value in the recorded computation graph."""

    __slots__ = ("value", "grad", "parents", "vjp", "op", "requires_grad")

    def __init__(self, value, parents=(), vjp=None, op="leaf", requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.vjp = vjp
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.value.shape})"


def constant(value) -> Tensor:
    return Tensor(value, op="const")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum out axes that broadcasting expanded."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.value + b.value, (a, b), op="add")
    out.vjp = lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape))
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.value * b.value, (a, b), op="mul")
    out.vjp = lambda g: (_unbroadcast(g * b.value, a.value.shape),
                         _unbroadcast(g * a.value, b.value.shape))
    return out


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.value @ b.value, (a, b), op="matmul")
    out.vjp = lambda g: (g @ b.value.T, a.value.T @ g)
    return out


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.value > 0
    out = Tensor(np.where(mask, x.value, 0.0), (x,), op="relu")
    out.vjp = lambda g: (g * mask,)
    return out


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-x.value))
    out = Tensor(s, (x,), op="sigmoid")
    out.vjp = lambda g: (g * s * (1.0 - s),)
    return out


def softmax(x: Tensor, axis: int = 0) -> Tensor:
    x = _as_tensor(x)
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s, (x,), op="softmax")
    out.vjp = lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),)
    return out


def standardize(x: Tensor, axis: int = 0, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance normalization along ``axis`` (training-mode
    batch-norm core; scale and shift are separate parameters)."""
    x = _as_tensor(x)
    mu = x.value.mean(axis=axis, keepdims=True)
    var = x.value.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    z = (x.value - mu) * inv
    out = Tensor(z, (x,), op="standardize")
    out.vjp = lambda g: ((g - g.mean(axis=axis, keepdims=True)
                          - z * (g * z).mean(axis=axis, keepdims=True)) * inv,)
    return out


def max_over_rows(x: Tensor) -> Tensor:
    """Global max pool over rows (nodes); output shape (1, cols).

    The gradient routes to the first (lowest-index) maximal row.
    """
    x = _as_tensor(x)
    arg = np.argmax(x.value, axis=0)
    out = Tensor(x.value.max(axis=0, keepdims=True), (x,), op="maxpool")

    def vjp(g):
        gx = np.zeros_like(x.value)
        gx[arg, np.arange(x.value.shape[1])] = g[0]
        return (gx,)

    out.vjp = vjp
    return out


def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.value for p in parts], axis=axis), tuple(parts),
                 op="concat")
    sizes = [p.value.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        sl = [slice(None)] * g.ndim
        grads = []
        for i in range(len(parts)):
            sl[axis] = slice(bounds[i], bounds[i + 1])
            grads.append(g[tuple(sl)])
        return tuple(grads)

    out.vjp = vjp
    return out


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.value[start:stop], (x,), op="slice")

    def vjp(g):
        gx = np.zeros_like(x.value)
        gx[start:stop] = g
        return (gx,)

    out.vjp = vjp
    return out


def mean_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.value.mean(), (x,), op="mean")
    out.vjp = lambda g: (np.full_like(x.value, float(g) / x.value.size),)
    return out


def elementwise(x: Tensor, value: np.ndarray, dvalue_dx: np.ndarray, op: str) -> Tensor:
    """Generic recorded elementwise map with a precomputed derivative."""
    x = _as_tensor(x)
    out = Tensor(value, (x,), op=op)
    out.vjp = lambda g: (g * dvalue_dx,)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every reachable tensor."""
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node.vjp is None or node.grad is None:
            continue
        grads = node.vjp(node.grad)
        for parent, g in zip(node.parents, grads):
            if not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad = parent.grad + g


def first_nonfinite(loss: Tensor) -> str | None:
    """Name (op) of the first tensor with a non-finite value on the path
    to ``loss``, searched in forward (creation) order."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    for node in order:
        if not np.all(np.isfinite(node.value)):
            return node.op
    return None


class ParamStore:
    """Named learnable parameter matrices with uniform Glorot init."""

    def __init__(self, seed: int = 0):
        self._params: dict[str, Tensor] = {}
        self.rng = np.random.default_rng(seed)

    def create(self, name: str, shape: tuple, init: str = "glorot") -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        rows, cols = (shape if len(shape) == 2 else (1, shape[0]))
        if init == "zeros":
            value = np.zeros((rows, cols))
        elif init == "ones":
            value = np.ones((rows, cols))
        else:
            bound = np.sqrt(6.0 / (rows + cols))
            value = self.rng.uniform(-bound, bound, size=(rows, cols))
        t = Tensor(value, op=f"param:{name}", requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        return {name: (t.grad if t.grad is not None else np.zeros_like(t.value))
                for name, t in self._params.items()}

    def values(self) -> dict[str, np.ndarray]:
        return {name: t.value.copy() for name, t in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            if name not in values:
                raise KeyError(f"checkpoint is missing parameter {name!r}")
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != t.value.shape:
                raise ValueError(
                    f"parameter {name!r} shape {arr.shape} != expected {t.value.shape}")
            t.value = arr.copy()


def save_params(path, params: ParamStore | dict) -> None:
    """Flat binary container: magic, then per parameter name length, name,
    rows, cols and row-major float64 little-endian data."""
    values = params.values() if isinstance(params, ParamStore) else params
    with open(Path(path), "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for name, arr in values.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.ndim == 1:
                arr = arr.reshape(1, -1)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
            fh.write(arr.astype("<f8").tobytes())


def load_params(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {blob[:8]!r}")
    pos = 8
    out: dict[str, np.ndarray] = {}
    while pos < len(blob):
        (nlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        rows, cols = struct.unpack_from("<II", blob, pos)
        pos += 8
        count = rows * cols
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos)
        pos += 8 * count
        out[name] = arr.reshape(rows, cols).astype(np.float64)
    return out
