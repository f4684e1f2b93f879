"""Differentiable point process: thinning with relaxed marks.

Proposals come from a homogeneous Poisson process at rate ``lambda_bar``.
Instead of accepting or rejecting each proposal by a categorical draw over
``[lambda; lambda_bar - |lambda|] / lambda_bar``, every proposal is kept and
receives a concrete (Gumbel-softmax) mark at temperature ``tau``.  The last
coordinate of that draw is the overflow share ``r = 1 - |p|``.  The result is
a point process whose marks lie in the convex hull of the one-hot vectors and
zero, differentiable in the intensity parameters for fixed noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .concrete import concrete_from_gumbels, concrete_log_density_from_log, pi_bar_compose
from .errors import DomainError
from .numerics import gumbel_from_uniform
from .point_process import IntensityModel, SpikeTrain, _Buffer, sample_homogeneous_poisson


@dataclass(frozen=True)
class DppConfig:
    lambda_bar: float
    temperature: float

    def __post_init__(self):
        if not self.lambda_bar > 0.0:
            raise ValueError(f"lambda_bar must be positive, got {self.lambda_bar!r}")
        if not self.temperature > 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature!r}")


class DiffTrain(SpikeTrain):
    """A realization of the differentiable process.

    ``marks`` are in the history's mark space (for a hidden-neuron model,
    embedded into all ``D`` neurons).  ``log_marks`` holds the log of the
    ``K + 1`` model-space coordinates including the overflow share; it stays
    finite when the linear marks underflow at small temperatures.
    """

    __slots__ = ("base_count", "log_marks")

    def __init__(self, times, marks, horizon, log_marks, base_count: int | None = None,
                 validate: bool = True):
        super().__init__(times, marks, horizon, validate=validate)
        self.log_marks = log_marks
        self.base_count = len(self.times) if base_count is None else int(base_count)
        if self.base_count != len(self.times):
            raise ValueError("every proposal of the base process must appear as an event")
        if len(log_marks) != len(self.times):
            raise ValueError("log_marks must have one row per event")

    @classmethod
    def from_train(cls, train: SpikeTrain, model: IntensityModel) -> "DiffTrain":
        """Rebuild log coordinates from stored marks (e.g. after loading from disk)."""
        rows = []
        for mark in train.mark_values():
            coords = _model_coords(model, mark)
            rest = 1.0 - float(np.sum(coords))
            if np.any(coords < 0.0) or rest < 0.0:
                raise DomainError("mark outside the convex hull of one-hot vectors and zero")
            rows.append([ad.log(float(c)) for c in coords] + [ad.log(rest)])
        return cls(train.times, train.marks, train.horizon, rows)

    def overflow(self) -> np.ndarray:
        """The implicit coordinate ``1 - |p|`` per event."""
        return np.array([math.exp(ad.value(row[-1])) for row in self.log_marks])

    def rounded(self, model: IntensityModel | None = None) -> SpikeTrain:
        """Argmax-round every mark and drop events whose argmax is the overflow."""
        keep_t, keep_m = [], []
        for t, row, mark in zip(self.times, self.log_marks, self.mark_values()):
            vals = [ad.value(v) for v in row]
            k = int(np.argmax(vals))
            if k == len(vals) - 1:
                continue
            onehot = np.zeros(len(vals) - 1)
            onehot[k] = 1.0
            keep_t.append(t)
            keep_m.append(model.embed_mark(onehot) if model is not None else onehot)
        dim = self.dim
        if not keep_t:
            return SpikeTrain.empty(dim, self.horizon)
        return SpikeTrain(np.asarray(keep_t), np.asarray(keep_m, dtype=np.float64), self.horizon, validate=False)


def _model_coords(model: IntensityModel, embedded):
    fn = getattr(model, "mark_coords", None)
    return np.asarray(fn(embedded) if fn is not None else embedded, dtype=np.float64)


@dataclass
class DppNoise:
    """Frozen randomness of one draw: proposal times and ``(n, K + 1)`` Gumbel uniforms."""

    proposals: np.ndarray
    gumbel_uniforms: np.ndarray

    @classmethod
    def draw(cls, lambda_bar: float, horizon: float, n_categories: int,
             rng: np.random.Generator) -> "DppNoise":
        if lambda_bar == 0.0:
            return cls(np.zeros(0), np.zeros((0, n_categories)))
        props = sample_homogeneous_poisson(lambda_bar, horizon, rng)
        return cls(props, rng.random((props.shape[0], n_categories)))


def dpp_sample(model: IntensityModel, config: DppConfig, horizon: float,
               rng: np.random.Generator | None = None,
               clamped_history: SpikeTrain | None = None,
               noise: DppNoise | None = None) -> DiffTrain:
    """Sample relaxed events; marks are TapeVars when the model's parameters are.

    ``clamped_history`` (e.g. observed neurons) conditions the intensity and
    is interleaved in time order with already-sampled relaxed events, but is
    not part of the output.
    """
    K1 = model.dim + 1
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise is required")
        noise = DppNoise.draw(config.lambda_bar, horizon, K1, rng)
    if noise.gumbel_uniforms.shape != (len(noise.proposals), K1):
        raise ValueError("noise does not match the model's mark dimension")
    log_bar = math.log(config.lambda_bar)
    hdim = model.history_dim
    clamp = clamped_history if clamped_history is not None else SpikeTrain.empty(hdim, horizon)
    buf = _Buffer(hdim, len(clamp) + len(noise.proposals), horizon, dtype=object)
    out_m, out_lm = [], []
    ci = 0
    for s, u in zip(noise.proposals, noise.gumbel_uniforms):
        while ci < len(clamp) and clamp.times[ci] < s:
            buf.push(clamp.times[ci], clamp.marks[ci])
            ci += 1
        hist = buf.view()
        log_pi = pi_bar_compose(model.log_intensities(s, hist), log_bar,
                                model.log_rest(s, hist, log_bar))
        point = concrete_from_gumbels(log_pi, gumbel_from_uniform(u), config.temperature)
        mark = model.embed_mark(point.coords[:-1])
        buf.push(s, mark)
        out_m.append(mark)
        out_lm.append(point.log_coords)
    marks = np.empty((len(out_m), hdim), dtype=object)
    for n, m in enumerate(out_m):
        marks[n] = m
    if not any(isinstance(v, ad.TapeVar) for v in marks.ravel()):
        marks = marks.astype(np.float64)
        out_lm = [[float(v) for v in row] for row in out_lm]
    return DiffTrain(noise.proposals.copy(), marks, horizon, out_lm, validate=False)


def _log_coords(mark) -> list:
    mark = list(mark)
    total = 0.0
    for p in mark:
        total = total + p
    if any(ad.value(p) < 0.0 for p in mark) or ad.value(total) > 1.0:
        raise DomainError("mark outside the convex hull of one-hot vectors and zero")
    return [ad.log(p) for p in mark] + [ad.log(1.0 - total)]


def dpp_log_intensity(t: float, log_mark, history: SpikeTrain, model: IntensityModel, config: DppConfig):
    """``log lambda_bar + log g_tau(mark; pi(t | history))`` from log coordinates (length K + 1)."""
    if len(log_mark) != model.dim + 1:
        raise ValueError(f"expected {model.dim + 1} log coordinates")
    if any(ad.value(v) == -math.inf for v in log_mark):
        return -math.inf
    log_bar = math.log(config.lambda_bar)
    log_pi = pi_bar_compose(model.log_intensities(t, history), log_bar,
                            model.log_rest(t, history, log_bar))
    return log_bar + concrete_log_density_from_log(log_mark, log_pi, config.temperature)


def dpp_conditional_intensity(t: float, mark, history: SpikeTrain, model: IntensityModel, config: DppConfig):
    """Intensity at a model-space mark ``p`` (length K, ``|p| <= 1``)."""
    if len(mark) != model.dim:
        raise ValueError(f"expected a mark of length {model.dim}")
    lam = dpp_log_intensity(t, _log_coords(mark), history, model, config)
    if isinstance(lam, ad.TapeVar):
        return ad.exp(lam)
    return math.exp(lam) if lam > -math.inf else 0.0


def dpp_log_density(train: DiffTrain, model: IntensityModel, config: DppConfig,
                    clamped_history: SpikeTrain | None = None):
    """Log density of a realization: sum of log intensities minus ``lambda_bar * T``.

    The compensator is exact because the total rate is ``lambda_bar`` at all times.
    """
    hist = train if clamped_history is None else clamped_history.merge(train)
    total = 0.0
    for t, row in zip(train.times, train.log_marks):
        total = total + dpp_log_intensity(t, row, hist.history_before(t), model, config)
    return total - config.lambda_bar * train.horizon
