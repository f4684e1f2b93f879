"""Probabilistic spiking neural network with an Epanechnikov filter bank.

Neuron ``d`` has membrane potential

    u_d(t) = u_bar_d + sum_{(t', p) in history} sum_{d'} p_{d'} f_{d', d}(t - t')

with ``f_{d', d}(s) = sum_l w[d', d, l] * kappa(s - s_l)`` for ``s >= 0`` and
fires at rate ``a * sigmoid(u_d)``.  Marks may be relaxed (fractional); the
potential is linear in each mark, so a zero mark is inert.

The scalar functions here are generic: parameters and marks may be floats or
:class:`~dppsnn.autodiff.TapeVar`.  :class:`SNNModel` and
:class:`HiddenSNNModel` override the batch hooks of
:class:`~dppsnn.point_process.IntensityModel` with the compiled kernels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import kernels
from .numerics import log_sigmoid_array
from .dpp import dpp_conditional_intensity
from .errors import DomainError
from .point_process import IntensityModel, SpikeTrain, thin_with_noise, sample_homogeneous_poisson


@dataclass
class SNNParams:
    """Biases ``u_bar (D,)`` and filter weights ``weights (D, D, L)`` indexed ``[from, to, l]``.

    ``kernel_centers``, ``amplitude`` and ``observable`` are structural and
    never trained.  Entries of ``u_bar``/``weights`` may be TapeVars (object
    arrays) after :meth:`lift`.
    """

    u_bar: np.ndarray
    weights: np.ndarray
    kernel_centers: np.ndarray
    amplitude: float = 5.0
    observable: tuple = ()

    def __post_init__(self):
        if self.u_bar.dtype != object:
            self.u_bar = np.asarray(self.u_bar, dtype=np.float64)
        if self.weights.dtype != object:
            self.weights = np.asarray(self.weights, dtype=np.float64)
        self.kernel_centers = np.asarray(self.kernel_centers, dtype=np.float64).reshape(-1)
        self.observable = tuple(sorted(int(d) for d in self.observable))
        D = self.u_bar.shape[0]
        if self.weights.shape != (D, D, self.kernel_centers.shape[0]):
            raise ValueError(f"weights shape {self.weights.shape} does not match D={D}, "
                             f"L={self.kernel_centers.shape[0]}")
        if not self.amplitude > 0.0:
            raise ValueError("amplitude must be positive")
        if any(d < 0 or d >= D for d in self.observable) or len(set(self.observable)) != len(self.observable):
            raise ValueError(f"observable indices {self.observable} invalid for D={D}")

    @property
    def dim(self) -> int:
        return self.u_bar.shape[0]

    @property
    def n_kernels(self) -> int:
        return self.kernel_centers.shape[0]

    @property
    def hidden(self) -> tuple:
        obs = set(self.observable)
        return tuple(d for d in range(self.dim) if d not in obs)

    @property
    def n_free(self) -> int:
        return self.u_bar.size + self.weights.size

    def flat(self) -> np.ndarray:
        return np.concatenate([ad.values(self.u_bar).ravel(), ad.values(self.weights).ravel()])

    def from_flat(self, vec) -> "SNNParams":
        """Same structure with trainable entries taken from ``vec``."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_free,):
            raise ValueError(f"expected {self.n_free} values, got {vec.shape}")
        D = self.dim
        return SNNParams(vec[:D].copy(), vec[D:].reshape(self.weights.shape).copy(),
                         self.kernel_centers.copy(), self.amplitude, self.observable)

    def copy(self) -> "SNNParams":
        return self.from_flat(self.flat())

    def project_diagonal(self) -> "SNNParams":
        """Clamp self-connection weights to ``<= 0`` in place (refractory reset)."""
        idx = np.arange(self.dim)
        self.weights[idx, idx, :] = np.minimum(self.weights[idx, idx, :], 0.0)
        return self

    def lift(self, tape: ad.Tape) -> "SNNParams":
        """Copy with every trainable entry a leaf on ``tape``."""
        return SNNParams(tape.leaves(self.u_bar), tape.leaves(self.weights),
                         self.kernel_centers, self.amplitude, self.observable)

    def values(self) -> "SNNParams":
        return self.from_flat(self.flat())

    def gradient_of(self, grads: ad.Gradients) -> np.ndarray:
        """Flat gradient for a lifted parameter set."""
        return np.concatenate([grads.of(self.u_bar).ravel(), grads.of(self.weights).ravel()])

    def memory(self) -> float:
        """Lag beyond which events no longer affect any potential."""
        return float(self.kernel_centers.max()) + 1.0


def epanechnikov(s: float) -> float:
    v = 0.75 * (1.0 - s * s)
    return v if v > 0.0 else 0.0


def filter_value(d_from: int, d_to: int, s: float, params: SNNParams):
    if s < 0.0:
        return 0.0
    total = 0.0
    for l, c in enumerate(params.kernel_centers):
        k = epanechnikov(s - c)
        if k > 0.0:
            total = total + params.weights[d_from, d_to, l] * k
    return total


def _active(p) -> bool:
    return isinstance(p, ad.TapeVar) or p != 0.0


def membrane_potentials(t: float, history: SpikeTrain, params: SNNParams) -> list:
    """Potentials of all neurons at ``t``; ``history`` must precede ``t``."""
    u = list(params.u_bar)
    times = history.times
    lo = int(np.searchsorted(times, t - params.memory(), side="right"))
    hi = int(np.searchsorted(times, t, side="left"))
    D, W = params.dim, params.weights
    for j in range(lo, hi):
        s = t - times[j]
        ks = [(l, epanechnikov(s - c)) for l, c in enumerate(params.kernel_centers)]
        ks = [(l, k) for l, k in ks if k > 0.0]
        if not ks:
            continue
        mark = history.marks[j]
        for f in range(D):
            p = mark[f]
            if not _active(p):
                continue
            for d in range(D):
                filt = 0.0
                for l, k in ks:
                    filt = filt + W[f, d, l] * k
                u[d] = u[d] + filt * p
    return u


def membrane_potential(d: int, t: float, history: SpikeTrain, params: SNNParams):
    return membrane_potentials(t, history, params)[d]


def snn_intensity(t: float, mark, history: SpikeTrain, params: SNNParams):
    """``p . a sigmoid(u(t))`` for a one-hot neuron mark."""
    mark = np.asarray(mark)
    if mark.shape != (params.dim,):
        raise ValueError(f"mark must have length {params.dim}")
    u = membrane_potentials(t, history, params)
    total = 0.0
    for p, ud in zip(mark, u):
        if _active(p):
            total = total + p * ad.sigmoid_amp(ud, params.amplitude)
    return total


def variational_intensity(t: float, mark, history: SpikeTrain, phi: SNNParams):
    """Rate of hidden neuron ``mark`` under the variational parameters ``phi``."""
    mark = np.asarray(mark)
    obs = list(phi.observable)
    if obs and any(_active(p) for p in mark[obs]):
        raise DomainError("variational intensity is defined for hidden marks only")
    return snn_intensity(t, mark, history, phi)


def dsnn_intensity(t: float, mark, history: SpikeTrain, params: SNNParams, config):
    """Intensity of the relaxed network.

    Observable one-hot marks follow the plain network; marks supported on the
    hidden neurons follow the differentiable point process over them.
    """
    mark = np.asarray(mark)
    vals = ad.values(mark)
    obs, hid = list(params.observable), list(params.hidden)
    on_obs = vals[obs] if obs else np.zeros(0)
    on_hid = vals[hid] if hid else np.zeros(0)
    if np.count_nonzero(on_obs) == 1 and on_obs.max() == 1.0 and not np.any(on_hid):
        return snn_intensity(t, mark, history, params)
    if not np.any(on_obs) and np.all(on_hid >= 0.0) and on_hid.sum() <= 1.0:
        model = HiddenSNNModel(params, config.lambda_bar)
        return dpp_conditional_intensity(t, [mark[h] for h in hid], history, model, config)
    raise DomainError("mark is neither an observable one-hot nor a relaxed hidden mark")


def init_params(rng: np.random.Generator, D: int, L: int, amplitude: float,
                centers: Sequence[float], observable: Sequence[int]) -> SNNParams:
    """Biases from U[-1, 1], cross weights from U[-5, 5], self weights from U[-5, -0.1]."""
    centers = np.asarray(centers, dtype=np.float64)
    if centers.shape != (L,):
        raise ValueError(f"expected {L} kernel centres")
    u_bar = rng.uniform(-1.0, 1.0, D)
    W = rng.uniform(-5.0, 5.0, (D, D, L))
    idx = np.arange(D)
    W[idx, idx, :] = rng.uniform(-5.0, -0.1, (D, L))
    return SNNParams(u_bar, W, centers, float(amplitude), tuple(observable))


def _plain(params: SNNParams) -> SNNParams:
    return params.values() if params.u_bar.dtype == object or params.weights.dtype == object else params


def potentials_at(times, train: SpikeTrain, params: SNNParams) -> np.ndarray:
    """Potentials ``(len(times), D)`` against ``train`` via the kernel backend."""
    p = _plain(params)
    return kernels.potentials(np.asarray(times, dtype=np.float64), train.times, train.mark_values(),
                              p.u_bar, p.weights, p.kernel_centers)


def _log_rest(u_sel: Sequence, amplitude: float, lambda_bar: float):
    """``log(bar - a * sum sigmoid(u))`` without cancellation (needs ``bar >= a * n``)."""
    n = len(u_sel)
    slack = lambda_bar - amplitude * n
    if slack < 0.0:
        return None
    terms = [math.log(amplitude) + ad.log_sigmoid(-x) for x in u_sel]
    if slack > 0.0:
        terms.append(math.log(slack))
    return ad.logsumexp(terms)


class SNNModel(IntensityModel):
    """The full network as a point process over ``D`` one-hot marks (bound ``a * D``)."""

    def __init__(self, params: SNNParams, lambda_bar: float | None = None):
        self.params = params
        self.dim = params.dim
        self._bar = float(lambda_bar) if lambda_bar is not None else params.amplitude * params.dim

    def upper_bound(self) -> float:
        return self._bar

    def intensities(self, t, history):
        a = self.params.amplitude
        return [ad.sigmoid_amp(x, a) for x in membrane_potentials(t, history, self.params)]

    def log_intensities(self, t, history):
        la = math.log(self.params.amplitude)
        return [la + ad.log_sigmoid(x) for x in membrane_potentials(t, history, self.params)]

    def log_rest(self, t, history, log_lambda_bar):
        return _log_rest(membrane_potentials(t, history, self.params), self.params.amplitude, self._bar)

    def event_log_intensities(self, train):
        if len(train) == 0:
            return np.zeros(0)
        mv = train.mark_values()
        if not np.all((mv == 0.0) | (mv == 1.0)) or not np.all(mv.sum(axis=1) == 1.0):
            return super().event_log_intensities(train)
        u = potentials_at(train.times, train, self.params)
        d = np.argmax(mv, axis=1)
        return math.log(self.params.amplitude) + log_sigmoid_array(u[np.arange(len(train)), d])

    def total_intensities(self, times, train):
        u = potentials_at(times, train, self.params)
        return self.params.amplitude * np.exp(log_sigmoid_array(u)).sum(axis=1)


class HiddenSNNModel(IntensityModel):
    """The hidden neurons as a point process over ``|H|`` marks.

    Histories live in the full ``D``-dimensional mark space (observed events
    are clamped in).  The default bound is ``a * |H|``.
    """

    def __init__(self, params: SNNParams, lambda_bar: float | None = None):
        self.params = params
        self.hidden = params.hidden
        self.dim = len(self.hidden)
        self._bar = float(lambda_bar) if lambda_bar is not None else params.amplitude * self.dim

    @property
    def history_dim(self):
        return self.params.dim

    def upper_bound(self):
        return self._bar

    def _u(self, t, history):
        u = membrane_potentials(t, history, self.params)
        return [u[h] for h in self.hidden]

    def intensities(self, t, history):
        a = self.params.amplitude
        return [ad.sigmoid_amp(x, a) for x in self._u(t, history)]

    def log_intensities(self, t, history):
        la = math.log(self.params.amplitude)
        return [la + ad.log_sigmoid(x) for x in self._u(t, history)]

    def log_rest(self, t, history, log_lambda_bar):
        return _log_rest(self._u(t, history), self.params.amplitude, self._bar)

    def embed_mark(self, mark):
        mark = list(mark)
        dtype = object if any(isinstance(m, ad.TapeVar) for m in mark) else np.float64
        out = np.zeros(self.params.dim, dtype=dtype)
        for h, m in zip(self.hidden, mark):
            out[h] = m
        return out

    def mark_coords(self, embedded):
        return [embedded[h] for h in self.hidden]

    def total_intensities(self, times, train):
        u = potentials_at(times, train, self.params)[:, list(self.hidden)]
        return self.params.amplitude * np.exp(log_sigmoid_array(u)).sum(axis=1)


# -- fast samplers ---------------------------------------------------------


@dataclass
class ThinningNoise:
    """Proposal times and one classification uniform per proposal."""

    proposals: np.ndarray
    uniforms: np.ndarray

    @classmethod
    def draw(cls, rate: float, horizon: float, rng: np.random.Generator) -> "ThinningNoise":
        if rate == 0.0:
            return cls(np.zeros(0), np.zeros(0))
        props = sample_homogeneous_poisson(rate, horizon, rng)
        return cls(props, rng.random(props.shape[0]))


def sample_network(params: SNNParams, horizon: float, rng: np.random.Generator,
                   noise: ThinningNoise | None = None) -> SpikeTrain:
    """Thinning sample of all ``D`` neurons (bound ``a * D``) via the kernel backend."""
    bar = params.amplitude * params.dim
    noise = noise if noise is not None else ThinningNoise.draw(bar, horizon, rng)
    idx, dims = kernels.thin_hidden(noise.proposals, noise.uniforms, np.zeros(0), np.zeros((0, params.dim)),
                                    params.u_bar, params.weights, params.kernel_centers,
                                    params.amplitude, bar, np.arange(params.dim))
    return _onehot_train(noise.proposals[idx], dims, params.dim, horizon)


def sample_hidden(params: SNNParams, observed: SpikeTrain, rng: np.random.Generator,
                  lambda_bar: float | None = None, noise: ThinningNoise | None = None) -> SpikeTrain:
    """Thinning sample of the hidden neurons with ``observed`` clamped in."""
    hidden = np.asarray(params.hidden, dtype=np.int64)
    if hidden.size == 0:
        return SpikeTrain.empty(params.dim, observed.horizon)
    bar = float(lambda_bar) if lambda_bar is not None else params.amplitude * len(hidden)
    if bar < params.amplitude * len(hidden):
        raise ValueError("lambda_bar must be at least amplitude * |hidden|")
    noise = noise if noise is not None else ThinningNoise.draw(bar, observed.horizon, rng)
    idx, dims = kernels.thin_hidden(noise.proposals, noise.uniforms, observed.times, observed.mark_values(),
                                    params.u_bar, params.weights, params.kernel_centers,
                                    params.amplitude, bar, hidden)
    return _onehot_train(noise.proposals[idx], dims, params.dim, observed.horizon)


def sample_network_reference(params: SNNParams, horizon: float, noise: ThinningNoise) -> SpikeTrain:
    """Generic-route twin of :func:`sample_network` (same noise, same output)."""
    return thin_with_noise(SNNModel(params), horizon, noise.proposals, noise.uniforms)


def _onehot_train(times, dims, D, horizon) -> SpikeTrain:
    marks = np.zeros((len(times), D))
    marks[np.arange(len(times)), dims] = 1.0
    return SpikeTrain(np.asarray(times, dtype=np.float64), marks, horizon, validate=False)
