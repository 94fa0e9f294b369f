"""Small reverse-mode autodiff engine over float64 numpy arrays.

Only the operations the model needs are provided. Every op builds a new
``Tensor`` that remembers its parents and a closure mapping the output
gradient to parent gradients; ``backward`` walks that tape in reverse
topological order and then frees it.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import CompatibilityError, ContractError, DimensionError, InputError

DTYPE = np.float64
_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

CHECKPOINT_MAGIC = b"GRELA1\n"


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class Parameter(Tensor):
    """A named leaf tensor that always requires gradients."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _result(ad @ bd, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got {a.shape}")
    return _result(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {src} as {tuple(shape)}") from exc
    return _result(data.copy(), (a,), lambda g: (g.reshape(src),))


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def add_row(a: Tensor, row: Tensor) -> Tensor:
    """``a + row`` with ``row`` of shape (n,) broadcast over the rows of ``a``."""
    if a.data.ndim != 2 or row.shape != (a.shape[1],):
        raise DimensionError(f"add_row: cannot broadcast {row.shape} over {a.shape}")
    return _result(a.data + row.data, (a, row), lambda g: (g, g.sum(axis=0)))


def mul_row(a: Tensor, row: Tensor) -> Tensor:
    if a.data.ndim != 2 or row.shape != (a.shape[1],):
        raise DimensionError(f"mul_row: cannot broadcast {row.shape} over {a.shape}")
    ad, rd = a.data, row.data
    return _result(ad * rd, (a, row), lambda g: (g * rd, (g * ad).sum(axis=0)))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def add_const(a: Tensor, c: float) -> Tensor:
    return _result(a.data + float(c), (a,), lambda g: (g,))


def div_scalar(a: Tensor, s: Tensor) -> Tensor:
    """Divide every element of ``a`` by the single-element tensor ``s``."""
    if s.size != 1:
        raise DimensionError(f"div_scalar: divisor must be a scalar, got {s.shape}")
    ad = a.data
    sv = float(s.data.reshape(-1)[0])
    out = ad / sv
    s_shape = s.shape

    def backward(g):
        return g / sv, np.full(s_shape, -(g * ad).sum() / (sv * sv))

    return _result(out, (a, s), backward)


def minimum_const(a: Tensor, c: float) -> Tensor:
    """Elementwise ``min(a, c)``; the gradient is routed to entries below ``c``."""
    ad = a.data
    keep = ad < c
    return _result(np.where(keep, ad, float(c)), (a,), lambda g: (g * keep,))


def gelu(a: Tensor) -> Tensor:
    """Exact GeLU, x * Phi(x)."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return _result(x * cdf, (a,), lambda g: (g * (cdf + x * pdf),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def softmax_rows(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"softmax_rows: expected a matrix, got {a.shape}")
    x = a.data
    e = np.exp(x - x.max(axis=1, keepdims=True))
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _result(y, (a,), backward)


# ---------------------------------------------------------------- reductions


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _result(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean_rows(a: Tensor) -> Tensor:
    """Average over the first axis: (m, n) -> (n,)."""
    if a.data.ndim != 2:
        raise DimensionError(f"mean_rows: expected a matrix, got {a.shape}")
    m = a.shape[0]
    return _result(a.data.mean(axis=0), (a,), lambda g: (np.broadcast_to(g / m, a.shape).copy(),))


def embed(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of ``table``; gradients scatter-add back."""
    idx = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise DimensionError(f"embed: table must be a matrix, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise DimensionError(f"embed: id out of range for table {table.shape}")
    shape = table.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _result(table.data[idx], (table,), backward)


def bce(pred: Tensor, target, eps: float = 1e-7) -> Tensor:
    """Mean binary cross-entropy with ``eps`` added inside both logarithms."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=DTYPE)
    if pred.shape != t.shape:
        raise DimensionError(f"bce: shape mismatch {pred.shape} vs {t.shape}")
    p = pred.data
    n = max(p.size, 1)
    # log arguments capped at 1 so the loss never dips below zero
    pos = np.minimum(p + eps, 1.0)
    neg = np.minimum(1.0 - p + eps, 1.0)
    val = -(t * np.log(pos) + (1.0 - t) * np.log(neg)).sum() / n

    def backward(g):
        d_pos = np.where(p + eps < 1.0, t / pos, 0.0)
        d_neg = np.where(1.0 - p + eps < 1.0, (1.0 - t) / neg, 0.0)
        return (float(g) * (d_neg - d_pos) / n,)

    return _result(np.array(val), (pred,), backward)


# ---------------------------------------------------------------- backward


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor that needs it.

    The recorded graph is released afterwards, so a second call on the same
    loss only seeds the loss itself.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            prev = grads.get(key)
            grads[key] = pg if prev is None else prev + pg
    for node in order:
        if not isinstance(node, Parameter):
            node._parents = ()
            node._backward = None


# ---------------------------------------------------------------- parameters


def glorot_uniform(rng: np.random.Generator, shape: Sequence[int]) -> np.ndarray:
    fan_in, fan_out = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], shape[0])
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=tuple(shape))


class ParamSet:
    """Ordered, name-unique collection of parameters."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def weight(self, name: str, shape: Sequence[int], rng: np.random.Generator) -> Parameter:
        return self.add(name, glorot_uniform(rng, shape))

    def bias(self, name: str, n: int) -> Parameter:
        return self.add(name, np.zeros(n))

    def add(self, name: str, data) -> Parameter:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        p = Parameter(name, data)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def count(self) -> int:
        return sum(p.size for p in self._params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {n: self._params[n].data.copy() for n in self.names()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self._params):
            missing = sorted(set(self._params) - set(state))
            extra = sorted(set(state) - set(self._params))
            raise CompatibilityError(f"parameter names differ: missing={missing} unexpected={extra}")
        for name, arr in state.items():
            p = self._params[name]
            if p.shape != arr.shape:
                raise CompatibilityError(f"{name}: shape {arr.shape} does not match {p.shape}")
            p.data = np.array(arr, dtype=DTYPE)


def write_checkpoint(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    """Write arrays as ``GRELA1`` text headers followed by little-endian float64 payloads."""
    chunks = [CHECKPOINT_MAGIC]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype=DTYPE)
        if any(c.isspace() for c in name):
            raise InputError(f"parameter name {name!r} contains whitespace")
        dims = " ".join(str(d) for d in arr.shape)
        header = f"{name} {arr.ndim}" + (f" {dims}" if dims else "") + "\n"
        chunks.append(header.encode("ascii"))
        chunks.append(np.ascontiguousarray(arr).astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise CompatibilityError(f"{path}: not a GRELA1 checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    out: dict[str, np.ndarray] = {}
    while pos < len(raw):
        end = raw.index(b"\n", pos)
        fields = raw[pos:end].decode("ascii").split()
        pos = end + 1
        name, ndim = fields[0], int(fields[1])
        shape = tuple(int(d) for d in fields[2 : 2 + ndim])
        n = int(np.prod(shape)) if shape else 1
        nbytes = 8 * n
        if pos + nbytes > len(raw):
            raise CompatibilityError(f"{path}: truncated payload for {name}")
        out[name] = np.frombuffer(raw[pos : pos + nbytes], dtype="<f8").astype(DTYPE).reshape(shape)
        pos += nbytes
    return out


# ---------------------------------------------------------------- gradient checking


def numerical_grad(f: Callable[[], float], p: Tensor, step: float = 1e-4) -> np.ndarray:
    """Central differences of the scalar function ``f`` w.r.t. every entry of ``p``."""
    flat = p.data.reshape(-1)
    g = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        g[i] = (up - down) / (2.0 * step)
    return g.reshape(p.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    """``||a - n|| / max(||a||, ||n||)``; zero when both are below ``floor``."""
    na, nn = np.linalg.norm(analytic), np.linalg.norm(numeric)
    denom = max(na, nn)
    if denom < floor:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Iterable[Tensor],
    step: float = 1e-4,
) -> dict[str, float]:
    """Compare analytic and central-difference gradients for each parameter.

    Returns a map from parameter name (or position) to relative error.
    """
    params = list(params)
    for p in params:
        p.grad = None
    backward(loss_fn())
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]

    def value() -> float:
        return loss_fn().item()

    errors: dict[str, float] = {}
    for i, (p, a) in enumerate(zip(params, analytic)):
        num = numerical_grad(value, p, step)
        errors[getattr(p, "name", str(i))] = relative_error(a, num)
    return errors
