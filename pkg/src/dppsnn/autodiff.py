"""Scalar reverse-mode automatic differentiation.

A :class:`Tape` records every operation as ``(kind, parents, partials)``
in execution order, so the list is already topologically sorted and the
reverse sweep is a single backwards pass.  The module-level functions
(:func:`exp`, :func:`log`, ...) accept plain floats as well as
:class:`TapeVar` and only record when a TapeVar is involved; model code
written against them runs unchanged on either.
"""
from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from . import numerics
from .errors import DomainError

KINDS = (
    "leaf", "add", "sub", "mul", "div", "neg", "exp", "log", "power",
    "max0", "sigmoid_amp", "log_sigmoid", "logsumexp", "log1mexp",
)


class Tape:
    __slots__ = ("kinds", "parents", "partials", "values")

    def __init__(self):
        self.kinds: list[str] = []
        self.parents: list[tuple[int, ...]] = []
        self.partials: list[tuple[float, ...]] = []
        self.values: list[float] = []

    def __len__(self):
        return len(self.values)

    def _record(self, kind, value, parents, partials) -> "TapeVar":
        if not math.isfinite(value):
            raise DomainError(f"{kind}: non-finite result {value!r}")
        self.kinds.append(kind)
        self.parents.append(parents)
        self.partials.append(partials)
        self.values.append(value)
        return TapeVar(self, len(self.values) - 1, value)

    def leaf(self, value: float) -> "TapeVar":
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"leaf value must be finite, got {value!r}")
        return self._record("leaf", value, (), ())

    def leaves(self, values) -> np.ndarray:
        """Lift an array of floats to an object array of leaves (same shape)."""
        arr = np.asarray(values, dtype=np.float64)
        out = np.empty(arr.shape, dtype=object)
        for idx in np.ndindex(arr.shape):
            out[idx] = self.leaf(arr[idx])
        return out

    def apply(self, kind: str, *args, amplitude: float | None = None) -> "TapeVar":
        return _APPLY[kind](self, args, amplitude)

    def backward(self, root: "TapeVar") -> "Gradients":
        if root.tape is not self:
            raise ValueError("root belongs to a different tape")
        adj = [0.0] * len(self.values)
        adj[root.index] = 1.0
        parents, partials = self.parents, self.partials
        for i in range(root.index, -1, -1):
            a = adj[i]
            if a == 0.0:
                continue
            for p, dp in zip(parents[i], partials[i]):
                adj[p] += a * dp
        return Gradients(adj, self.kinds)


class Gradients:
    """Adjoints from one reverse sweep, indexable by TapeVar or node index."""

    __slots__ = ("_adj", "_kinds")

    def __init__(self, adj, kinds):
        self._adj = adj
        self._kinds = kinds

    def __getitem__(self, var) -> float:
        idx = var.index if isinstance(var, TapeVar) else int(var)
        if idx >= len(self._adj):
            return 0.0
        return self._adj[idx]

    def of(self, arr) -> np.ndarray:
        """Gradients for an object array of TapeVars (floats map to 0)."""
        arr = np.asarray(arr, dtype=object)
        out = np.zeros(arr.shape)
        for idx in np.ndindex(arr.shape):
            v = arr[idx]
            if isinstance(v, TapeVar):
                out[idx] = self[v]
        return out

    def leaves(self) -> dict[int, float]:
        return {i: a for i, (k, a) in enumerate(zip(self._kinds, self._adj)) if k == "leaf"}


def backward(tape: Tape, root: "TapeVar") -> Gradients:
    return tape.backward(root)


class TapeVar:
    __slots__ = ("tape", "index", "value")

    def __init__(self, tape: Tape, index: int, value: float):
        self.tape = tape
        self.index = index
        self.value = value

    def __repr__(self):
        return f"TapeVar({self.value!r}, index={self.index})"

    def __float__(self):
        return self.value

    def __add__(self, o):
        return _binary(self.tape, "add", self, o)

    def __radd__(self, o):
        return _binary(self.tape, "add", o, self)

    def __sub__(self, o):
        return _binary(self.tape, "sub", self, o)

    def __rsub__(self, o):
        return _binary(self.tape, "sub", o, self)

    def __mul__(self, o):
        return _binary(self.tape, "mul", self, o)

    def __rmul__(self, o):
        return _binary(self.tape, "mul", o, self)

    def __truediv__(self, o):
        return _binary(self.tape, "div", self, o)

    def __rtruediv__(self, o):
        return _binary(self.tape, "div", o, self)

    def __neg__(self):
        return self.tape.apply("neg", self)

    def __pow__(self, o):
        return self.tape.apply("power", self, o)


def _val(x) -> float:
    return x.value if isinstance(x, TapeVar) else float(x)


def _pack(tape, kind, value, args, partials):
    parents, dps = [], []
    for a, dp in zip(args, partials):
        if isinstance(a, TapeVar):
            if a.tape is not tape:
                raise ValueError("arguments live on different tapes")
            parents.append(a.index)
            dps.append(dp)
    return tape._record(kind, value, tuple(parents), tuple(dps))


def _binary(tape, kind, x, y):
    return tape.apply(kind, x, y)


def _apply_add(tape, args, _):
    x, y = args
    return _pack(tape, "add", _val(x) + _val(y), args, (1.0, 1.0))


def _apply_sub(tape, args, _):
    x, y = args
    return _pack(tape, "sub", _val(x) - _val(y), args, (1.0, -1.0))


def _apply_mul(tape, args, _):
    x, y = args
    vx, vy = _val(x), _val(y)
    return _pack(tape, "mul", vx * vy, args, (vy, vx))


def _apply_div(tape, args, _):
    x, y = args
    vx, vy = _val(x), _val(y)
    if vy == 0.0:
        raise DomainError("div: division by zero")
    q = vx / vy
    return _pack(tape, "div", q, args, (1.0 / vy, -q / vy))


def _apply_neg(tape, args, _):
    (x,) = args
    return _pack(tape, "neg", -_val(x), args, (-1.0,))


def _apply_exp(tape, args, _):
    (x,) = args
    e = math.exp(_val(x)) if _val(x) < 709.78 else math.inf
    return _pack(tape, "exp", e, args, (e,))


def _apply_log(tape, args, _):
    (x,) = args
    v = _val(x)
    if not v > 0.0:
        raise DomainError(f"log: non-positive input {v!r}")
    return _pack(tape, "log", math.log(v), args, (1.0 / v,))


def _apply_power(tape, args, _):
    x, y = args
    vx, vy = _val(x), _val(y)
    if isinstance(y, TapeVar) and not vx > 0.0:
        raise DomainError("power: base must be positive when the exponent is differentiated")
    if vx == 0.0 and vy < 1.0:
        raise DomainError("power: derivative undefined at zero base")
    r = vx ** vy
    dx = vy * vx ** (vy - 1.0) if vy != 0.0 else 0.0
    dy = r * math.log(vx) if vx > 0.0 else 0.0
    return _pack(tape, "power", r, args, (dx, dy))


def _apply_max0(tape, args, _):
    (x,) = args
    v = _val(x)
    return _pack(tape, "max0", v if v > 0.0 else 0.0, args, (1.0 if v > 0.0 else 0.0,))


def _apply_sigmoid_amp(tape, args, amplitude):
    (x,) = args
    if amplitude is None:
        raise ValueError("sigmoid_amp needs an amplitude")
    v = _val(x)
    s = math.exp(numerics.log_sigmoid(v))
    sm = math.exp(numerics.log_sigmoid(-v))
    return _pack(tape, "sigmoid_amp", amplitude * s, args, (amplitude * s * sm,))


def _apply_log_sigmoid(tape, args, _):
    (x,) = args
    v = _val(x)
    return _pack(tape, "log_sigmoid", numerics.log_sigmoid(v), args,
                 (math.exp(numerics.log_sigmoid(-v)),))


def _apply_logsumexp(tape, args, _):
    vals = [_val(a) for a in args]
    r = numerics.log_sum_exp(vals)
    if math.isinf(r):
        raise DomainError(f"logsumexp: non-finite result {r!r}")
    return _pack(tape, "logsumexp", r, args, tuple(math.exp(v - r) for v in vals))


def _apply_log1mexp(tape, args, _):
    (x,) = args
    v = _val(x)
    r = numerics.log1mexp(v)
    # d/da log(1 - e^-a) = e^-a / (1 - e^-a) = 1 / expm1(a)
    return _pack(tape, "log1mexp", r, args, (1.0 / math.expm1(v),))


_APPLY = {
    "add": _apply_add, "sub": _apply_sub, "mul": _apply_mul, "div": _apply_div,
    "neg": _apply_neg, "exp": _apply_exp, "log": _apply_log, "power": _apply_power,
    "max0": _apply_max0, "sigmoid_amp": _apply_sigmoid_amp,
    "log_sigmoid": _apply_log_sigmoid, "logsumexp": _apply_logsumexp,
    "log1mexp": _apply_log1mexp,
}


# -- generic scalar functions: record on a tape when given a TapeVar ------


def _tape_of(args: Iterable) -> Tape | None:
    for a in args:
        if isinstance(a, TapeVar):
            return a.tape
    return None


def exp(x):
    if isinstance(x, TapeVar):
        return x.tape.apply("exp", x)
    return math.exp(x)


def log(x):
    if isinstance(x, TapeVar):
        return x.tape.apply("log", x)
    if not x > 0.0:
        if x == 0.0:
            return -math.inf
        raise DomainError(f"log: negative input {x!r}")
    return math.log(x)


def max0(x):
    if isinstance(x, TapeVar):
        return x.tape.apply("max0", x)
    return x if x > 0.0 else 0.0


def sigmoid_amp(x, amplitude: float):
    if isinstance(x, TapeVar):
        return x.tape.apply("sigmoid_amp", x, amplitude=amplitude)
    return amplitude * math.exp(numerics.log_sigmoid(x))


def log_sigmoid(x):
    if isinstance(x, TapeVar):
        return x.tape.apply("log_sigmoid", x)
    return numerics.log_sigmoid(x)


def logsumexp(xs: Sequence):
    xs = list(xs)
    tape = _tape_of(xs)
    if tape is not None:
        return tape.apply("logsumexp", *xs)
    return numerics.log_sum_exp(xs)


def log1mexp(x):
    if isinstance(x, TapeVar):
        return x.tape.apply("log1mexp", x)
    return numerics.log1mexp(x)


def value(x) -> float:
    return _val(x)


def values(arr) -> np.ndarray:
    arr = np.asarray(arr, dtype=object)
    return np.vectorize(_val, otypes=[np.float64])(arr) if arr.size else np.zeros(arr.shape)
