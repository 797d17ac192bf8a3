"""Dense float64 tensors with tape-based reverse-mode differentiation and RMSProp.

Operations are recorded on the active :class:`Tape` whenever one of their
operands requires a gradient. ``backward`` replays the tape in reverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class TapeStateError(RuntimeError):
    pass


_ACTIVE_TAPES: list["Tape"] = []


def _active_tape() -> "Tape | None":
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


@dataclass
class _Record:
    op: str
    inputs: tuple["Tensor", ...]
    output: "Tensor"
    rule: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


class Tape:
    """Ordered log of primitive applications.

    Use as a context manager; any op executed inside with a grad-requiring
    operand is appended. A tape may be differentiated exactly once.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, loss: "Tensor") -> dict[int, np.ndarray]:
        if self.consumed:
            raise TapeStateError("tape already differentiated; run a fresh forward pass")
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self.consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.rule(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return grads


def backward(loss: "Tensor", tape: Tape, params: Sequence["Tensor"] | None = None) -> list[np.ndarray]:
    """Differentiate ``loss`` and store ``dloss/dp`` in ``p.grad``.

    Parameters unreachable from the loss get an all-zero gradient.
    """
    grads = tape.backward(loss)
    params = list(params) if params is not None else []
    out = []
    for p in params:
        g = grads.get(id(p))
        p.grad = np.zeros_like(p.data) if g is None else np.array(g, dtype=DTYPE).reshape(p.shape)
        out.append(p.grad)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# Local gradient rules, looked up by op name at backward time.
_RULES: dict[str, Callable] = {}


def _rule(name):
    def deco(fn):
        _RULES[name] = fn
        return fn
    return deco


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, value: np.ndarray, inputs: tuple[Tensor, ...], rule) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"non-finite values produced by {op}")
    out = Tensor(value)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append(_Record(op, inputs, out, rule))
    return out


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make("div", ad / bd, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape),
                            _unbroadcast(-g * ad / (bd * bd), bd.shape)))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make("square", ad * ad, (a,), lambda g: (2.0 * ad * g,))


def matmul(a, b) -> Tensor:
    """Matrix product; leading batch axes broadcast like ``np.matmul``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def rule(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make("matmul", ad @ bd, (a, b), rule)


# ---------------------------------------------------------------- reductions / shape

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("sum", np.sum(a.data, axis=axis, keepdims=keepdims), (a,), rule)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else int(np.prod([a.shape[x] for x in np.atleast_1d(axis)]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make("transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def index(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def rule(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.add.at(full, idx, g)
        return (full,)

    return _make("index", a.data[idx], (a,), rule)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
            t.shape[i] != ts[0].shape[i] for i in range(t.ndim) if i != ax
        ):
            raise ShapeError(f"concat shape mismatch: {ts[0].shape} vs {t.shape} on axis {axis}")
    sizes = [t.shape[ax] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    return _make("concat", np.concatenate([t.data for t in ts], axis=ax), ts,
                 lambda g: tuple(np.split(g, cuts, axis=ax)))


def concat_features(a, b) -> Tensor:
    """Column-wise concatenation of two row-aligned matrices."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_features row mismatch: {a.shape} vs {b.shape}")
    return concat([a, b], axis=1)


# ---------------------------------------------------------------- nonlinearities

@_rule("tanh")
def _tanh_grad(x, y, g):
    return g * (1.0 - y * y)


@_rule("relu")
def _relu_grad(x, y, g):
    return g * (x > 0)


@_rule("exp")
def _exp_grad(x, y, g):
    return g * y


def _unary(name, fn):
    def op(a) -> Tensor:
        a = as_tensor(a)
        x = a.data
        with np.errstate(over="ignore", invalid="ignore"):
            y = fn(x)  # _make reports non-finite results
        return _make(name, y, (a,), lambda g: (_RULES[name](x, y, g),))
    op.__name__ = name
    return op


tanh = _unary("tanh", np.tanh)
relu = _unary("relu", lambda x: np.maximum(x, 0.0))
exp = _unary("exp", np.exp)


def identity(a) -> Tensor:
    return as_tensor(a)


ACTIVATIONS = {"tanh": tanh, "relu": relu, "identity": identity}


def activation(x, kind: str = "tanh") -> Tensor:
    return ACTIVATIONS[kind](x)


def softmax_rows(a) -> Tensor:
    """Softmax along the last axis, stabilised by subtracting the row max."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make("softmax", s, (a,), rule)


def mse_loss(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    return mean(square(pred - target))


# ---------------------------------------------------------------- parameters

def init_uniform(rng: np.random.Generator, shape, fan_in: int, name: str | None = None) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def zeros_param(shape, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


@dataclass
class OptimizerState:
    lr: float = 5e-4
    decay: float = 0.9
    eps: float = 1e-8
    sq_avg: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")


def rmsprop_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: OptimizerState) -> None:
    """In-place RMSProp update.

    v <- decay*v + (1-decay)*g^2 ;  p <- p - lr*g/(sqrt(v)+eps)
    """
    if len(params) != len(grads):
        raise ShapeError("params and grads are not aligned")
    for i, (p, g) in enumerate(zip(params, grads)):
        v = state.sq_avg.get(i)
        if v is None:
            v = np.zeros_like(p.data)
        v = state.decay * v + (1.0 - state.decay) * g * g
        state.sq_avg[i] = v
        p.data = p.data - state.lr * g / (np.sqrt(v) + state.eps)


class RMSProp:
    def __init__(self, params: Iterable[Tensor], lr=5e-4, decay=0.9, eps=1e-8):
        self.params = list(params)
        self.state = OptimizerState(lr=lr, decay=decay, eps=eps)

    def step(self, grads: Sequence[np.ndarray] | None = None):
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        rmsprop_step(self.params, grads, self.state)


# ---------------------------------------------------------------- gradient checking

def finite_difference_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor],
                            step: float = 1e-6) -> float:
    """Largest relative error between tape gradients and central differences.

    ``loss_fn`` must rebuild the loss from the current parameter values.
    The error for one parameter tensor is ``|analytic - numeric| / (|numeric| + 1e-8)``
    using Euclidean norms over its entries.
    """
    with Tape() as tape:
        loss = loss_fn()
    analytic = backward(loss, tape, params)
    worst = 0.0
    for p, ga in zip(params, analytic):
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            fp = loss_fn().item()
            flat[k] = orig - step
            fm = loss_fn().item()
            flat[k] = orig
            numeric.reshape(-1)[k] = (fp - fm) / (2.0 * step)
        err = np.linalg.norm(ga - numeric) / (np.linalg.norm(numeric) + 1e-8)
        worst = max(worst, float(err))
    return worst
