"""Log-domain primitives.

Every probability and intensity downstream is carried as a log value;
these helpers keep the conversions accurate near 0 and 1.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import DomainError

LOG2 = math.log(2.0)
TINY = np.finfo(np.float64).tiny
ONE_MINUS_ULP = float(np.nextafter(1.0, 0.0))


def log1mexp(a: float) -> float:
    """Return ``log(1 - exp(-a))`` for ``a > 0``.

    Uses ``log(-expm1(-a))`` below ``log 2`` and ``log1p(-exp(-a))`` above,
    which keeps full relative precision on both sides.
    """
    if not a > 0.0:
        raise DomainError(f"log1mexp requires a > 0, got {a!r}")
    if a <= LOG2:
        return math.log(-math.expm1(-a))
    return math.log1p(-math.exp(-a))


def log1mexp_array(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if np.any(~(a > 0.0)):
        raise DomainError("log1mexp requires a > 0 elementwise")
    small = a <= LOG2
    out = np.empty_like(a)
    out[small] = np.log(-np.expm1(-a[small]))
    out[~small] = np.log1p(-np.exp(-a[~small]))
    return out


def log_sum_exp(v) -> float:
    """``log(sum(exp(v)))`` with the max subtracted first; ``-inf`` entries allowed."""
    arr = np.asarray(v, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    m = float(arr.max())
    if math.isinf(m):
        return m
    return m + math.log(float(np.sum(np.exp(arr - m))))


def log_sigmoid(x: float) -> float:
    """``log(1 / (1 + exp(-x)))`` without overflow in either tail."""
    if x >= 0.0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


def log_sigmoid_array(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0.0, -np.log1p(np.exp(-np.abs(x))), x - np.log1p(np.exp(-np.abs(x))))


def clamp_uniform(u):
    """Clamp uniforms into ``[tiny, 1 - ulp]`` so Gumbel transforms stay finite."""
    return np.clip(u, TINY, ONE_MINUS_ULP)


def gumbel_from_uniform(u):
    u = clamp_uniform(u)
    return -np.log(-np.log(u))


def sample_gumbel(rng: np.random.Generator) -> float:
    """One standard Gumbel draw, ``-log(-log u)``."""
    return float(gumbel_from_uniform(rng.random()))


def sample_gumbels(rng: np.random.Generator, size) -> np.ndarray:
    return gumbel_from_uniform(rng.random(size))
