"""Marked temporal point processes defined by conditional intensities.

A :class:`SpikeTrain` stores event times and D-dimensional marks as arrays;
``history_before(t)`` hands out zero-copy prefixes so an intensity model
only ever sees events strictly before the query time.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .concrete import pi_bar_compose
from .errors import ContractViolation


class MarkedEvent(NamedTuple):
    time: float
    mark: np.ndarray


class SpikeTrain:
    """Time-ordered marked events on ``(0, horizon]``."""

    __slots__ = ("times", "marks", "horizon")

    def __init__(self, times, marks, horizon: float, validate: bool = True):
        times = np.asarray(times, dtype=np.float64)
        if not isinstance(marks, np.ndarray):
            marks = np.asarray(marks, dtype=np.float64)
        if marks.ndim != 2 or marks.shape[0] != times.shape[0]:
            raise ValueError(f"marks shape {marks.shape} does not match {times.shape[0]} events")
        if validate:
            if not horizon > 0.0:
                raise ValueError(f"horizon must be positive, got {horizon!r}")
            if times.size:
                if np.any(np.diff(times) <= 0.0):
                    raise ValueError("event times must be strictly increasing")
                if times[0] <= 0.0 or times[-1] > horizon:
                    raise ValueError("event times must lie in (0, horizon]")
        self.times = times
        self.marks = marks
        self.horizon = float(horizon)

    @classmethod
    def empty(cls, dim: int, horizon: float) -> "SpikeTrain":
        return cls(np.zeros(0), np.zeros((0, dim)), horizon)

    @classmethod
    def from_events(cls, events: Sequence, horizon: float, dim: int | None = None) -> "SpikeTrain":
        events = list(events)
        if not events:
            if dim is None:
                raise ValueError("dim is required for an empty train")
            return cls.empty(dim, horizon)
        times = [float(t) for t, _ in events]
        marks = np.asarray([np.asarray(m, dtype=np.float64) for _, m in events])
        return cls(times, marks, horizon)

    @property
    def dim(self) -> int:
        return self.marks.shape[1]

    @property
    def events(self) -> list[MarkedEvent]:
        return [MarkedEvent(float(t), m) for t, m in zip(self.times, self.marks)]

    def __len__(self):
        return self.times.shape[0]

    def __iter__(self):
        return iter(self.events)

    def __repr__(self):
        return f"SpikeTrain(n={len(self)}, dim={self.dim}, horizon={self.horizon})"

    def history_before(self, t: float) -> "SpikeTrain":
        n = int(np.searchsorted(self.times, t, side="left"))
        return SpikeTrain(self.times[:n], self.marks[:n], self.horizon, validate=False)

    def mark_values(self) -> np.ndarray:
        """Float view of the marks (TapeVar entries replaced by their values)."""
        if self.marks.dtype == object:
            return ad.values(self.marks)
        return self.marks

    def dims(self) -> np.ndarray:
        """Index of the largest mark coordinate per event (the neuron for one-hot marks)."""
        return np.argmax(self.mark_values(), axis=1) if len(self) else np.zeros(0, dtype=np.int64)

    def restrict(self, dims: Sequence[int]) -> "SpikeTrain":
        """Events whose mark has mass on ``dims``, with all other coordinates zeroed."""
        mv = self.mark_values()
        keep = np.zeros(mv.shape[1], dtype=bool)
        keep[list(dims)] = True
        sel = np.any(mv[:, keep] != 0.0, axis=1) if len(self) else np.zeros(0, dtype=bool)
        marks = self.marks[sel].copy()
        marks[:, ~keep] = 0.0
        return SpikeTrain(self.times[sel], marks, self.horizon, validate=False)

    def merge(self, other: "SpikeTrain") -> "SpikeTrain":
        if other.dim != self.dim:
            raise ValueError("cannot merge trains of different mark dimension")
        times = np.concatenate([self.times, other.times])
        order = np.argsort(times, kind="stable")
        if self.marks.dtype == object or other.marks.dtype == object:
            marks = np.concatenate([self.marks.astype(object), other.marks.astype(object)])
        else:
            marks = np.concatenate([self.marks, other.marks])
        return SpikeTrain(times[order], marks[order], max(self.horizon, other.horizon))


class IntensityModel(ABC):
    """Conditional intensity over ``dim`` one-hot marks.

    Implementations must return nonnegative intensities whose sum never
    exceeds :meth:`upper_bound`.  Divergence and right-continuity of the
    compensator cannot be checked mechanically; they are the implementor's
    obligation.
    """

    dim: int

    @abstractmethod
    def intensities(self, t: float, history: SpikeTrain) -> Sequence:
        """Vector ``[lambda(t, 1_d | history)]_d``."""

    @abstractmethod
    def upper_bound(self) -> float:
        """Constant bounding the total intensity."""

    @property
    def history_dim(self) -> int:
        return self.dim

    def log_intensities(self, t: float, history: SpikeTrain) -> list:
        return [ad.log(x) for x in self.intensities(t, history)]

    def log_rest(self, t: float, history: SpikeTrain, log_lambda_bar: float):
        """Optional accurate ``log(bar - sum(lambda))``; ``None`` falls back to log1mexp."""
        return None

    def embed_mark(self, mark) -> np.ndarray:
        """Map a model-space mark into the history's mark space."""
        return np.asarray(mark)

    def eval(self, t: float, mark, history: SpikeTrain):
        lam = self.intensities(t, history)
        total = 0.0
        for p, x in zip(mark, lam):
            if isinstance(p, ad.TapeVar) or p != 0.0:
                total = total + p * x
        return total

    def event_log_intensities(self, train: SpikeTrain) -> np.ndarray:
        out = np.empty(len(train))
        for n, (t, mark) in enumerate(zip(train.times, train.mark_values())):
            out[n] = ad.log(float(self.eval(t, mark, train.history_before(t))))
        return out

    def total_intensities(self, times: np.ndarray, train: SpikeTrain) -> np.ndarray:
        out = np.empty(len(times))
        for m, t in enumerate(times):
            out[m] = float(sum(ad.value(x) for x in self.intensities(t, train.history_before(t))))
        return out


class ConstantIntensity(IntensityModel):
    """Homogeneous multivariate Poisson process."""

    def __init__(self, rates: Sequence[float], upper_bound: float | None = None):
        self.rates = np.asarray(rates, dtype=np.float64)
        if np.any(self.rates < 0.0):
            raise ValueError("rates must be nonnegative")
        self.dim = self.rates.shape[0]
        self._bar = float(upper_bound) if upper_bound is not None else max(float(self.rates.sum()), 1.0)

    def intensities(self, t, history):
        return list(self.rates)

    def upper_bound(self):
        return self._bar


class TimeVaryingIntensity(IntensityModel):
    """History-independent intensity ``fn(t) -> D-vector``."""

    def __init__(self, fn: Callable[[float], Sequence[float]], dim: int, upper_bound: float):
        self.fn = fn
        self.dim = dim
        self._bar = float(upper_bound)

    def intensities(self, t, history):
        return list(self.fn(t))

    def upper_bound(self):
        return self._bar


def poisson_times_from_uniforms(uniforms: np.ndarray, rate: float) -> np.ndarray:
    """Arrival times whose gaps are ``-log(u) / rate``."""
    return np.cumsum(-np.log(np.asarray(uniforms, dtype=np.float64)) / rate)


def sample_homogeneous_poisson(rate: float, horizon: float, rng: np.random.Generator) -> np.ndarray:
    if not rate > 0.0:
        raise ValueError(f"rate must be positive, got {rate!r}")
    if not horizon > 0.0:
        raise ValueError(f"horizon must be positive, got {horizon!r}")
    mean = rate * horizon
    chunk = int(mean + 5.0 * math.sqrt(mean) + 10)
    times = np.zeros(0)
    last = 0.0
    while True:
        u = 1.0 - rng.random(chunk)  # (0, 1]
        arr = last + poisson_times_from_uniforms(u, rate)
        if arr[-1] > horizon:
            times = np.concatenate([times, arr[arr <= horizon]])
            return times
        times = np.concatenate([times, arr])
        last = arr[-1]


class _Buffer:
    """Growable merged history (clamped events interleaved with sampled ones)."""

    def __init__(self, dim, capacity, horizon, dtype=np.float64):
        self.times = np.empty(max(capacity, 1))
        self.marks = np.zeros((max(capacity, 1), dim), dtype=dtype)
        self.n = 0
        self.horizon = horizon

    def push(self, t, mark):
        if self.n == self.times.shape[0]:
            self.times = np.concatenate([self.times, np.empty_like(self.times)])
            self.marks = np.concatenate([self.marks, np.zeros_like(self.marks)])
        self.times[self.n] = t
        self.marks[self.n] = mark
        self.n += 1

    def view(self) -> SpikeTrain:
        return SpikeTrain(self.times[:self.n], self.marks[:self.n], self.horizon, validate=False)


def thinning_sample(model: IntensityModel, horizon: float, rng: np.random.Generator,
                    clamped_history: SpikeTrain | None = None) -> SpikeTrain:
    """Ogata thinning for a multivariate process.

    Proposals come from a Poisson process at ``model.upper_bound()``; each is
    assigned a category by inverse-CDF over ``pi_bar_compose`` and dropped
    when the overflow category wins.  ``clamped_history`` holds fixed events
    (e.g. observed neurons) that condition the intensity but are not output.
    """
    bar = model.upper_bound()
    proposals = sample_homogeneous_poisson(bar, horizon, rng)
    uniforms = rng.random(proposals.shape[0])
    return thin_with_noise(model, horizon, proposals, uniforms, clamped_history)


def thin_with_noise(model: IntensityModel, horizon: float, proposals: np.ndarray,
                    uniforms: np.ndarray, clamped_history: SpikeTrain | None = None) -> SpikeTrain:
    bar = model.upper_bound()
    log_bar = math.log(bar)
    hdim = model.history_dim
    clamp = clamped_history if clamped_history is not None else SpikeTrain.empty(hdim, horizon)
    buf = _Buffer(hdim, len(clamp) + len(proposals), horizon)
    out_t, out_m = [], []
    ci = 0
    for s, u in zip(proposals, uniforms):
        while ci < len(clamp) and clamp.times[ci] < s:
            buf.push(clamp.times[ci], clamp.marks[ci])
            ci += 1
        hist = buf.view()
        log_lam = [ad.value(x) for x in model.log_intensities(s, hist)]
        log_pi = pi_bar_compose(log_lam, log_bar, model.log_rest(s, hist, log_bar))
        cum = np.cumsum(np.exp(log_pi[:-1]))
        d = int(np.searchsorted(cum, u, side="right"))
        if d < model.dim:
            onehot = np.zeros(model.dim)
            onehot[d] = 1.0
            mark = model.embed_mark(onehot)
            buf.push(s, mark)
            out_t.append(s)
            out_m.append(mark)
    if not out_t:
        return SpikeTrain.empty(hdim, horizon)
    return SpikeTrain(np.asarray(out_t), np.asarray(out_m), horizon)


def compensator_mc(model: IntensityModel, train: SpikeTrain, M: int, rng: np.random.Generator) -> float:
    """Unbiased Monte-Carlo estimate of the compensator over ``[0, T]``."""
    if M < 1:
        raise ValueError("compensator needs at least one sample")
    times = rng.uniform(0.0, train.horizon, M)
    return compensator_at(model, train, times)


def compensator_at(model: IntensityModel, train: SpikeTrain, times: np.ndarray) -> float:
    return train.horizon / len(times) * float(np.sum(model.total_intensities(times, train)))


def log_likelihood(model: IntensityModel, train: SpikeTrain, M: int, rng: np.random.Generator) -> float:
    """Event log-intensities minus the Monte-Carlo compensator; ``-inf`` if an event is impossible."""
    ev = model.event_log_intensities(train)
    comp = compensator_mc(model, train, M, rng)
    return float(np.sum(ev)) - comp


def rescaled_intervals(model: IntensityModel, train: SpikeTrain, quadrature_points: int) -> np.ndarray:
    """Compensator increments between consecutive events (midpoint rule).

    Under the true model these are i.i.d. Exp(1).
    """
    if quadrature_points < 2:
        raise ValueError("quadrature needs at least two points")
    if len(train) == 0:
        raise ValueError("train has no events")
    t = train.times
    gaps = np.diff(t)
    frac = (np.arange(quadrature_points) + 0.5) / quadrature_points
    grid = (t[:-1, None] + gaps[:, None] * frac[None, :]).ravel()
    lam = model.total_intensities(grid, train).reshape(len(gaps), quadrature_points)
    return gaps * lam.mean(axis=1)
