"""Dense f64 tensors with define-by-run reverse-mode differentiation.

Every primitive records its parents and a closure that pushes the output
gradient back to them. Graphs are rebuilt per minibatch; nothing is cached.
"""
from __future__ import annotations

import contextlib
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np


class NumericFailure(FloatingPointError):
    """A NaN or infinity appeared where finite values are required."""

    def __init__(self, where: str, step: int | None = None):
        self.where = where
        self.step = step
        msg = f"non-finite value produced by {where}"
        if step is not None:
            msg += f" at step {step}"
        super().__init__(msg)


class ShapeError(ValueError):
    pass


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording the graph (inference only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _broadcast_shape(a: tuple, b: tuple, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a} and {b}") from None


class Tensor:
    """A value in the computation graph.

    ``data`` is a float64 ndarray; ``grad`` is filled by :func:`backward`.
    Leaves created with ``requires_grad=True`` are trainable parameters.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 parents: tuple = (), backward_fn: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = backward_fn

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: mul(self, power(as_tensor(o), -1.0))
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, o: matmul(self, o)
    __pow__ = lambda self, p: power(self, p)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value: np.ndarray, op: str, parents: tuple, backward_fn: Callable) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NumericFailure(op)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(value, True, op, parents, backward_fn)
    return Tensor(value, False, op)


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


# ---------------------------------------------------------------- primitives

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")
    out_val = a.data + b.data

    def bw(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(g, b.shape))
    return _make(out_val, "add", (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "sub")

    def bw(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(-g, b.shape))
    return _make(a.data - b.data, "sub", (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "mul")

    def bw(g):
        _acc(a, _unbroadcast(g * b.data, a.shape))
        _acc(b, _unbroadcast(g * a.data, b.shape))
    return _make(a.data * b.data, "mul", (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, "neg", (a,), lambda g: _acc(a, -g))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        _acc(a, g @ b.data.T)
        _acc(b, a.data.T @ g)
    return _make(a.data @ b.data, "matmul", (a, b), bw)


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out_val = np.exp(a.data)
    return _make(out_val, "exp", (a,), lambda g: _acc(a, g * out_val))


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_val = np.log(a.data)
    return _make(out_val, "log", (a,), lambda g: _acc(a, g / a.data))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_val = np.tanh(a.data)
    return _make(out_val, "tanh", (a,), lambda g: _acc(a, g * (1.0 - out_val * out_val)))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), "abs", (a,), lambda g: _acc(a, g * np.sign(a.data)))


def power(a, p: float) -> Tensor:
    """Elementwise ``a ** p`` for a constant exponent."""
    a = as_tensor(a)
    if isinstance(p, Tensor):
        raise TypeError("power: exponent must be a constant")
    p = float(p)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out_val = a.data ** p

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = p * a.data ** (p - 1.0) if p != 1.0 else np.ones_like(a.data)
        _acc(a, g * d)
    return _make(out_val, f"pow{p:g}", (a,), bw)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient is zero where the clamp is active."""
    a = as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), "clip", (a,), lambda g: _acc(a, g * mask))


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_val = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g, a.shape))
    return _make(out_val, "sum", (a,), bw)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(reduce_sum(a, axis=axis), 1.0 / n)


def logsumexp(a, axis: int = -1) -> Tensor:
    """Stable log(sum(exp(a))) along ``axis``; the max shift is a constant."""
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    shifted = np.exp(a.data - m)
    s = shifted.sum(axis=axis, keepdims=True)
    out_val = np.squeeze(np.log(s) + m, axis=axis)

    def bw(g):
        _acc(a, np.expand_dims(g, axis) * shifted / s)
    return _make(out_val, "logsumexp", (a,), bw)


def concat(parts: Iterable, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    ax = axis % parts[0].ndim
    for p in parts[1:]:
        if p.ndim != parts[0].ndim or any(
                p.shape[i] != parts[0].shape[i] for i in range(p.ndim) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {[q.shape for q in parts]}")
    sizes = [p.shape[ax] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(lo, hi)
            _acc(p, g[tuple(idx)])
    return _make(np.concatenate([p.data for p in parts], axis=ax), "concat", tuple(parts), bw)


def take(a, indices, axis: int = -1) -> Tensor:
    """Gather entries along ``axis`` (slices, splits and permutations)."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    ax = axis % a.ndim

    def bw(g):
        full = np.zeros(a.shape)
        idx = [slice(None)] * a.ndim
        idx[ax] = indices
        np.add.at(full, tuple(idx), g)
        _acc(a, full)
    return _make(np.take(a.data, indices, axis=ax), "take", (a,), bw)


def split(a, index: int, axis: int = -1) -> tuple[Tensor, Tensor]:
    a = as_tensor(a)
    n = a.shape[axis]
    if not 0 < index < n:
        raise ShapeError(f"split: index {index} out of range for size {n}")
    return take(a, np.arange(index), axis), take(a, np.arange(index, n), axis)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), "reshape", (a,), lambda g: _acc(a, g.reshape(a.shape)))


def reverse(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    return take(a, np.arange(a.shape[axis])[::-1], axis)


# ---------------------------------------------------------------- backward

def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(output: Tensor, params: "ParamSet | None" = None) -> dict[str, np.ndarray]:
    """Populate ``.grad`` on every node reachable from a scalar ``output``.

    Returns the gradient map for ``params`` (zeros for parameters that do
    not influence the output).
    """
    if output.shape != ():
        raise ShapeError(f"backward: output must be scalar, got shape {output.shape}")
    if params is not None:
        for p in params.values():
            p.grad = None
    if output.requires_grad:
        order = _toposort(output)
        for node in order:
            node.grad = None
        output.grad = np.ones(())
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
    if params is None:
        return {}
    return {name: (p.grad if p.grad is not None else np.zeros(p.shape))
            for name, p in params.items()}


# ---------------------------------------------------------------- parameters

class ParamSet(OrderedDict):
    """Named trainable tensors, in registration order."""

    def add(self, name: str, value) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self[name] = t
        return t

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.items()}

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        for k, v in arrays.items():
            if k not in self:
                raise KeyError(f"unknown parameter {k!r}")
            if self[k].shape != np.shape(v):
                raise ShapeError(f"{k}: expected shape {self[k].shape}, got {np.shape(v)}")
            self[k].data = np.array(v, dtype=np.float64)

    def count(self) -> int:
        return sum(v.data.size for v in self.values())


def init_mlp(params: ParamSet, prefix: str, sizes: list[int], rng: np.random.Generator,
             zero_last: bool = True) -> None:
    """Glorot-uniform hidden layers; the output layer optionally starts at zero."""
    n = len(sizes) - 1
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        if i == n - 1 and zero_last:
            w = np.zeros((fan_in, fan_out))
        else:
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-lim, lim, size=(fan_in, fan_out))
        params.add(f"{prefix}.w{i}", w)
        params.add(f"{prefix}.b{i}", np.zeros(fan_out))


def mlp(params: ParamSet, prefix: str, x: Tensor, n_layers: int) -> Tensor:
    h = x
    for i in range(n_layers):
        h = matmul(h, params[f"{prefix}.w{i}"]) + params[f"{prefix}.b{i}"]
        if i < n_layers - 1:
            h = tanh(h)
    return h


# ---------------------------------------------------------------- gradient check

def gradient_check(f: Callable[[], Tensor], params: ParamSet, h: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    ``f`` rebuilds the scalar output from the current parameter values.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    out = f()
    analytic = backward(out, params)
    worst = 0.0
    for name, p in params.items():
        base = p.data
        flat = base.ravel()
        for j in range(flat.size):
            plus = flat.copy()
            plus[j] += h
            p.data = plus.reshape(base.shape)
            fp = f().item()
            minus = flat.copy()
            minus[j] -= h
            p.data = minus.reshape(base.shape)
            fm = f().item()
            p.data = base
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericFailure(f"gradient_check({name})")
            num = (fp - fm) / (2.0 * h)
            ana = analytic[name].ravel()[j]
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-12)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")


def adam_step(params: ParamSet, grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update. Parameters get fresh buffers."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericFailure(f"adam_step gradient {name!r}", step=state.t)
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        if state.m[name].shape != p.shape:
            raise ShapeError(f"adam state for {name!r} has shape {state.m[name].shape}")
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
