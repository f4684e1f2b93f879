"""Concrete (Gumbel-softmax) distribution in log scale.

All routines take ``log_pi`` (log unnormalised weights) and work for plain
floats or :class:`~dppsnn.autodiff.TapeVar` entries alike, so a sample or
density can be differentiated by lifting ``log_pi`` onto a tape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import numerics
from .errors import ContractViolation, DomainError


@dataclass(frozen=True)
class ConcreteParams:
    log_pi: Sequence
    temperature: float

    def __post_init__(self):
        if not self.temperature > 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature!r}")
        vals = [ad.value(v) for v in self.log_pi]
        if len(vals) < 2:
            raise ValueError("concrete distribution needs at least two categories")
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("log_pi entries must be finite")

    @property
    def size(self) -> int:
        return len(self.log_pi)


@dataclass(frozen=True)
class SimplexPoint:
    """A point of the open simplex together with its log coordinates.

    ``log_coords`` is authoritative: at small temperatures the linear
    coordinates can underflow to 0 while the logs stay finite.
    """

    coords: list
    log_coords: list

    @classmethod
    def from_coords(cls, coords) -> "SimplexPoint":
        coords = list(coords)
        return cls(coords, [ad.log(c) for c in coords])

    def argmax(self) -> int:
        return int(np.argmax([ad.value(v) for v in self.log_coords]))


def gumbel_max_sample(params: ConcreteParams, rng: np.random.Generator) -> np.ndarray:
    """Exact categorical draw; returns a one-hot vector of length K."""
    g = numerics.sample_gumbels(rng, params.size)
    return gumbel_max_from_gumbels(params.log_pi, g)


def gumbel_max_from_gumbels(log_pi, gumbels) -> np.ndarray:
    scores = np.asarray([ad.value(v) for v in log_pi]) + np.asarray(gumbels)
    out = np.zeros(len(scores))
    out[int(np.argmax(scores))] = 1.0
    return out


def concrete_sample(params: ConcreteParams, rng: np.random.Generator) -> SimplexPoint:
    g = numerics.sample_gumbels(rng, params.size)
    return concrete_from_gumbels(params.log_pi, g, params.temperature)


def concrete_from_gumbels(log_pi, gumbels, temperature: float) -> SimplexPoint:
    """Deterministic reparameterised map from Gumbel noise to the simplex."""
    y = [(lp + float(g)) / temperature for lp, g in zip(log_pi, gumbels)]
    z = ad.logsumexp(y)
    log_p = [yk - z for yk in y]
    return SimplexPoint([ad.exp(v) for v in log_p], log_p)


def concrete_log_density(p: SimplexPoint | Sequence, params: ConcreteParams):
    """Log density of the concrete distribution at ``p``.

    log[(K-1)! tau^(K-1) prod_k pi_k p_k^(-tau-1) / (sum_k pi_k p_k^(-tau))^K]
    """
    if isinstance(p, SimplexPoint):
        log_p = p.log_coords
    else:
        coords = list(p)
        if any(not ad.value(c) > 0.0 for c in coords):
            raise DomainError("concrete density is defined on the open simplex only")
        log_p = [ad.log(c) for c in coords]
    return concrete_log_density_from_log(log_p, params.log_pi, params.temperature)


def concrete_log_density_from_log(log_p, log_pi, temperature: float):
    k = len(log_p)
    if len(log_pi) != k:
        raise ValueError("log_p and log_pi lengths differ")
    tau = temperature
    const = math.lgamma(k) + (k - 1) * math.log(tau)
    acc = 0.0
    for lpi, lp in zip(log_pi, log_p):
        acc = acc + lpi - (tau + 1.0) * lp
    z = ad.logsumexp([lpi - tau * lp for lpi, lp in zip(log_pi, log_p)])
    return const + acc - k * z


def pi_bar_compose(log_lambda: Sequence, log_lambda_bar: float, log_rest=None) -> list:
    """Map D log-intensities to D+1 log-probabilities ``[lambda; bar - |lambda|] / bar``.

    ``log_rest`` may supply ``log(bar - sum(lambda))`` directly when the caller
    can compute it more accurately; otherwise it is recovered from
    ``log1mexp(log bar - logsumexp(log lambda))``.
    """
    head = [ll - log_lambda_bar for ll in log_lambda]
    if log_rest is not None:
        return head + [log_rest - log_lambda_bar]
    total = ad.logsumexp(log_lambda)
    gap = log_lambda_bar - total
    gv = ad.value(gap)
    if gv < 0.0:
        raise ContractViolation(
            f"total intensity exp({ad.value(total)!r}) exceeds upper bound exp({log_lambda_bar!r})")
    if gv == 0.0:
        if isinstance(gap, ad.TapeVar):
            raise DomainError("overflow probability is exactly zero")
        return head + [-math.inf]
    return head + [ad.log1mexp(gap)]
