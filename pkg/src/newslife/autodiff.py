"""Minimal reverse-mode automatic differentiation over numpy arrays.

The matcher network needs only a fixed, small set of operations (embedding
lookups, dense layers, tanh/sigmoid/softmax, concatenation, elementwise
products, dot products, reductions), so instead of pulling in a framework
this module records a per-result backward closure on each op and replays
them in reverse topological order.  Values are float64 throughout: the
training workloads are desk-scale and the extra precision makes
finite-difference gradient checks sharp.

Graphs are built implicitly through parent links; nothing is shared between
concurrent forward passes except the parameter leaves, so scoring with a
frozen ParamStore is safe from multiple threads.
"""

from __future__ import annotations

import hashlib
import math
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

__all__ = [
    "Tensor",
    "ParamStore",
    "Adam",
    "ShapeError",
    "backward",
    "lookup",
    "dense",
    "tanh",
    "sigmoid",
    "softmax",
    "concat",
    "add",
    "sub",
    "mul",
    "matmul",
    "dot",
    "reshape",
    "tsum",
    "tmean",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
]


class ShapeError(ValueError):
    """Incompatible operand shapes; message names the op and the shapes."""


class Tensor:
    """One node of the compute graph: a value plus how to push gradients back."""

    __slots__ = ("value", "grad", "_parents", "_bwd", "name")

    def __init__(
        self,
        value,
        parents: tuple["Tensor", ...] = (),
        bwd: Callable[[np.ndarray], None] | None = None,
        name: str = "",
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._bwd = bwd
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.value.shape})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def backward(out: Tensor) -> None:
    """Accumulate d(out)/d(leaf) into every reachable node's .grad.

    `out` must be scalar.  Gradients add onto existing .grad values, so
    batched losses can be backpropagated example by example with the seed
    scaled by the averaging weight.
    """
    if out.value.ndim != 0:
        raise ShapeError(f"backward: output must be scalar, got shape {out.value.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    out.accumulate(np.ones((), dtype=np.float64))
    for node in reversed(order):
        if node._bwd is not None and node.grad is not None:
            node._bwd(node.grad)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def lookup(table: Tensor, indices) -> Tensor:
    """Row gather: table[(V, d)][idx] -> (idx.shape..., d)."""
    idx = np.asarray(indices, dtype=np.int64)
    if table.value.ndim != 2:
        raise ShapeError(f"lookup: table must be 2-d, got {table.value.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.value.shape[0]):
        raise ShapeError(
            f"lookup: index out of range for table of {table.value.shape[0]} rows"
        )
    out_val = table.value[idx]

    def bwd(g: np.ndarray) -> None:
        gt = np.zeros_like(table.value)
        np.add.at(gt, idx.ravel(), g.reshape(-1, table.value.shape[1]))
        table.accumulate(gt)

    return Tensor(out_val, (table,), bwd)


def dense(x, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map on the last axis: y = x @ w.T + b with w of shape (out, in)."""
    x = _as_tensor(x)
    if w.value.ndim != 2 or x.value.shape[-1] != w.value.shape[1]:
        raise ShapeError(
            f"dense: input {x.value.shape} incompatible with weight {w.value.shape}"
        )
    out_val = x.value @ w.value.T
    if b is not None:
        if b.value.shape != (w.value.shape[0],):
            raise ShapeError(
                f"dense: bias {b.value.shape} incompatible with weight {w.value.shape}"
            )
        out_val = out_val + b.value

    def bwd(g: np.ndarray) -> None:
        din, dout = w.value.shape[1], w.value.shape[0]
        g2 = g.reshape(-1, dout)
        x2 = x.value.reshape(-1, din)
        x.accumulate((g @ w.value).reshape(x.value.shape))
        w.accumulate(g2.T @ x2)
        if b is not None:
            b.accumulate(g2.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out_val, parents, bwd)


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out_val = np.tanh(x.value)

    def bwd(g: np.ndarray) -> None:
        x.accumulate(g * (1.0 - out_val * out_val))

    return Tensor(out_val, (x,), bwd)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    v = x.value
    out_val = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                       np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))

    def bwd(g: np.ndarray) -> None:
        x.accumulate(g * out_val * (1.0 - out_val))

    return Tensor(out_val, (x,), bwd)


def softmax(x, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along one axis."""
    x = _as_tensor(x)
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_val = e / e.sum(axis=axis, keepdims=True)

    def bwd(g: np.ndarray) -> None:
        inner = (g * out_val).sum(axis=axis, keepdims=True)
        x.accumulate(out_val * (g - inner))

    return Tensor(out_val, (x,), bwd)


def concat(parts: Iterable, axis: int = -1) -> Tensor:
    nodes = [_as_tensor(p) for p in parts]
    out_val = np.concatenate([n.value for n in nodes], axis=axis)
    sizes = [n.value.shape[axis] for n in nodes]

    def bwd(g: np.ndarray) -> None:
        offset = 0
        for n, size in zip(nodes, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis if axis >= 0 else g.ndim + axis] = slice(offset, offset + size)
            n.accumulate(g[tuple(sl)])
            offset += size

    return Tensor(out_val, tuple(nodes), bwd)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_val = a.value + b.value

    def bwd(g: np.ndarray) -> None:
        a.accumulate(_unbroadcast(g, a.value.shape))
        b.accumulate(_unbroadcast(g, b.value.shape))

    return Tensor(out_val, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_val = a.value - b.value

    def bwd(g: np.ndarray) -> None:
        a.accumulate(_unbroadcast(g, a.value.shape))
        b.accumulate(_unbroadcast(-g, b.value.shape))

    return Tensor(out_val, (a, b), bwd)


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    out_val = a.value * b.value

    def bwd(g: np.ndarray) -> None:
        a.accumulate(_unbroadcast(g * b.value, a.value.shape))
        b.accumulate(_unbroadcast(g * a.value, b.value.shape))

    return Tensor(out_val, (a, b), bwd)


def matmul(a, b) -> Tensor:
    """2-d matrix product (m, k) @ (k, n)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.value.shape} @ {b.value.shape}")
    out_val = a.value @ b.value

    def bwd(g: np.ndarray) -> None:
        a.accumulate(g @ b.value.T)
        b.accumulate(a.value.T @ g)

    return Tensor(out_val, (a, b), bwd)


def dot(a, b) -> Tensor:
    """Inner product over the last axis, broadcasting leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.shape[-1] != b.value.shape[-1]:
        raise ShapeError(f"dot: last-axis mismatch {a.value.shape} vs {b.value.shape}")
    out_val = np.sum(a.value * b.value, axis=-1)

    def bwd(g: np.ndarray) -> None:
        ge = np.expand_dims(g, -1)
        a.accumulate(_unbroadcast(ge * b.value, a.value.shape))
        b.accumulate(_unbroadcast(ge * a.value, b.value.shape))

    return Tensor(out_val, (a, b), bwd)


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    out_val = x.value.reshape(shape)

    def bwd(g: np.ndarray) -> None:
        x.accumulate(g.reshape(x.value.shape))

    return Tensor(out_val, (x,), bwd)


def tsum(x, axis: int | None = None) -> Tensor:
    x = _as_tensor(x)
    out_val = x.value.sum(axis=axis)

    def bwd(g: np.ndarray) -> None:
        if axis is None:
            x.accumulate(np.broadcast_to(g, x.value.shape).copy())
        else:
            x.accumulate(np.broadcast_to(np.expand_dims(g, axis), x.value.shape).copy())

    return Tensor(out_val, (x,), bwd)


def tmean(x, axis: int | None = None) -> Tensor:
    x = _as_tensor(x)
    out_val = x.value.mean(axis=axis)
    n = x.value.size if axis is None else x.value.shape[axis]

    def bwd(g: np.ndarray) -> None:
        if axis is None:
            x.accumulate(np.broadcast_to(g / n, x.value.shape).copy())
        else:
            x.accumulate(
                np.broadcast_to(np.expand_dims(g / n, axis), x.value.shape).copy()
            )

    return Tensor(out_val, (x,), bwd)


# ---------------------------------------------------------------------------
# parameters, optimizer, checkpoints
# ---------------------------------------------------------------------------


class ParamStore:
    """Named trainable leaves with seeded initialization.

    Embeddings start uniform in (-0.1, 0.1); dense weights use Xavier
    scaling; biases start at zero.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}

    def _register(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(value, name=name)
        self.params[name] = t
        return t

    def add_embedding(self, name: str, rows: int, dim: int) -> Tensor:
        return self._register(name, self.rng.uniform(-0.1, 0.1, size=(rows, dim)))

    def add_uniform(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self._register(name, self.rng.uniform(-0.1, 0.1, size=shape))

    def add_dense(self, name: str, dout: int, din: int, bias: bool = True) -> Tensor:
        scale = math.sqrt(6.0 / (din + dout))
        w = self._register(f"{name}.w", self.rng.uniform(-scale, scale, size=(dout, din)))
        if bias:
            self._register(f"{name}.b", np.zeros(dout))
        return w

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def items(self):
        return self.params.items()

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad = None

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.value.shape for k, v in self.params.items()}


class Adam:
    """Standard Adam with bias correction over a ParamStore."""

    def __init__(
        self,
        store: ParamStore,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.value) for k, v in store.items()}
        self.v = {k: np.zeros_like(v.value) for k, v in store.items()}

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, p in self.store.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.value)
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def grad_check(
    fn: Callable[[], Tensor],
    store: ParamStore,
    eps: float = 1e-5,
    max_coords: int = 8,
    seed: int = 0,
    atol: float = 1e-10,
) -> dict[str, float]:
    """Compare analytic gradients against central finite differences.

    `fn` rebuilds the scalar loss from the store's current values.  For each
    parameter, up to `max_coords` coordinates are sampled and perturbed by
    +/- eps; the worst relative error per parameter is returned.  A pair of
    values that agree within `atol` absolutely counts as zero error, which
    covers coordinates where both the gradient and the difference vanish.
    """
    rng = np.random.default_rng(seed)
    store.zero_grads()
    out = fn()
    if not np.isfinite(out.value):
        raise FloatingPointError("grad_check: non-finite loss")
    backward(out)
    analytic = {
        k: (np.zeros_like(p.value) if p.grad is None else p.grad.copy())
        for k, p in store.items()
    }
    errors: dict[str, float] = {}
    for name, p in store.items():
        flat = p.value.reshape(-1)
        n = flat.size
        coords = rng.choice(n, size=min(max_coords, n), replace=False)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            f_plus = float(fn().value)
            flat[c] = orig - eps
            f_minus = float(fn().value)
            flat[c] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise FloatingPointError(f"grad_check: non-finite loss near {name!r}")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(analytic[name].reshape(-1)[c])
            diff = abs(a - numeric)
            if diff <= atol:
                continue
            denom = max(abs(a), abs(numeric))
            worst = max(worst, diff / denom)
        errors[name] = worst
    return errors


_CKPT_MAGIC = "NLCKPT1"


def save_checkpoint(path: str | Path, store: ParamStore, config_hash: str) -> None:
    """Write a versioned text header plus little-endian float64 arrays."""
    names = sorted(store.params)
    with Path(path).open("wb") as fh:
        header = [_CKPT_MAGIC, f"seed={store.seed}", f"config_hash={config_hash}",
                  f"count={len(names)}"]
        for name in names:
            shape = ",".join(str(d) for d in store.params[name].value.shape)
            header.append(f"{name} {shape}")
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        for name in names:
            arr = np.ascontiguousarray(store.params[name].value, dtype="<f8")
            fh.write(arr.tobytes())


def load_checkpoint(
    path: str | Path, expected_hash: str | None = None
) -> tuple[ParamStore, str]:
    """Read a checkpoint; validates the magic, hash, and array sizes."""
    raw = Path(path).read_bytes()
    # header is ASCII lines; locate its end by consuming count+4 lines
    pos = 0
    lines: list[str] = []

    def next_line() -> str:
        nonlocal pos
        end = raw.index(b"\n", pos)
        line = raw[pos:end].decode("ascii")
        pos = end + 1
        return line

    magic = next_line()
    if magic != _CKPT_MAGIC:
        raise ValueError(f"not a checkpoint file (magic {magic!r})")
    seed = int(next_line().split("=", 1)[1])
    config_hash = next_line().split("=", 1)[1]
    if expected_hash is not None and config_hash != expected_hash:
        raise ValueError(
            f"checkpoint config hash {config_hash} does not match expected {expected_hash}"
        )
    count = int(next_line().split("=", 1)[1])
    entries: list[tuple[str, tuple[int, ...]]] = []
    for _ in range(count):
        name, shape_s = next_line().rsplit(" ", 1)
        shape = tuple(int(d) for d in shape_s.split(",")) if shape_s else ()
        entries.append((name, shape))
    store = ParamStore(seed=seed)
    for name, shape in entries:
        size = int(np.prod(shape)) * 8
        arr = np.frombuffer(raw[pos : pos + size], dtype="<f8").reshape(shape).copy()
        if arr.size != int(np.prod(shape)):
            raise ValueError(f"checkpoint truncated at parameter {name!r}")
        pos += size
        store._register(name, arr)
    return store, config_hash


def config_fingerprint(fields: dict) -> str:
    """Stable short hash of the settings that fix parameter shapes."""
    canon = ";".join(f"{k}={fields[k]}" for k in sorted(fields))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]
