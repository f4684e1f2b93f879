"""Variational training of a partially observed spiking network.

The ELBO for an observed train is ``E_q[log p(obs, hid; theta) - log q(hid; phi)]``.
Two estimators of its gradient in ``phi`` are provided:

* score function: hidden trains come from the plain network driven by
  ``phi``; the gradient is ``d log q / d phi * (ell - 1)``;
* path-wise: hidden trains come from the differentiable point process over
  the hidden neurons; the single-sample ELBO is differentiated through the
  sampler.

Each estimator has a fast engine built on :mod:`dppsnn.kernels` and a tape
reference (the ``*_tape`` functions) used to check it.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels
from .dpp import DiffTrain, DppConfig, DppNoise, dpp_log_density, dpp_log_intensity, dpp_sample
from .numerics import log_sigmoid_array
from .point_process import SpikeTrain, log_likelihood
from .snn import (HiddenSNNModel, SNNModel, SNNParams, ThinningNoise, membrane_potentials,
                  sample_hidden)

ESTIMATORS = ("score", "pathwise")


@dataclass
class TrainConfig:
    estimator: str = "score"
    temperature: float = 0.3
    anneal_ratio: float = 0.95
    learning_rate: float = 0.05
    epochs: int = 10
    compensator_samples: int = 100
    elbo_samples: int = 1
    lambda_bar: float | None = None
    share_phi_theta: bool | None = None
    eval_samples: int = 10
    seed: int = 0
    eps: float = 1e-10

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if not 0.0 < self.anneal_ratio <= 1.0:
            raise ValueError("anneal_ratio must lie in (0, 1]")
        for name in ("epochs", "compensator_samples", "elbo_samples", "eval_samples"):
            if getattr(self, name) < 1 and not (name == "epochs" and getattr(self, name) == 0):
                raise ValueError(f"{name} must be at least 1")
        if not self.temperature > 0.0:
            raise ValueError("temperature must be positive")
        if self.learning_rate < 0.0:
            raise ValueError("learning_rate must be nonnegative")

    @property
    def shared(self) -> bool:
        if self.share_phi_theta is None:
            return self.estimator == "score"
        return bool(self.share_phi_theta)

    def bound(self, params: SNNParams) -> float:
        if self.lambda_bar is not None:
            return float(self.lambda_bar)
        return params.amplitude * len(params.hidden)

    def dpp(self, params: SNNParams, temperature: float | None = None) -> DppConfig:
        return DppConfig(self.bound(params), self.temperature if temperature is None else temperature)


@dataclass
class GradientEstimate:
    """One ELBO sample with flat gradients for ``theta`` and ``phi``."""

    elbo: float
    g_theta: np.ndarray
    g_phi: np.ndarray


@dataclass
class ScoreNoise:
    """Thinning noise for the hidden draw, compensator times for the ELBO
    sample and an independent set for the score of ``log q``."""

    thinning: ThinningNoise
    mc_elbo: np.ndarray
    mc_score: np.ndarray

    @classmethod
    def draw(cls, lambda_bar, horizon, M, rng) -> "ScoreNoise":
        th = ThinningNoise.draw(lambda_bar, horizon, rng)
        return cls(th, rng.uniform(0.0, horizon, M), rng.uniform(0.0, horizon, M))


@dataclass
class PathwiseNoise:
    dpp: DppNoise
    mc: np.ndarray

    @classmethod
    def draw(cls, lambda_bar, horizon, n_hidden, M, rng) -> "PathwiseNoise":
        dn = DppNoise.draw(lambda_bar, horizon, n_hidden + 1, rng)
        return cls(dn, rng.uniform(0.0, horizon, M))


# -- log-likelihoods -------------------------------------------------------


def joint_log_lik_vanilla(theta: SNNParams, train: SpikeTrain, M: int, rng: np.random.Generator) -> float:
    """Log-likelihood of a one-hot train over all neurons with a Monte-Carlo compensator."""
    return log_likelihood(SNNModel(theta), train, M, rng)


def log_lik_tape(params: SNNParams, train: SpikeTrain, mc_times, dims) -> object:
    """Generic log-likelihood of the events on ``dims`` (tape-capable).

    Every event of ``train`` conditions the potentials; only events on
    ``dims`` contribute log-intensities, and the compensator covers ``dims``.
    """
    dims = list(dims)
    la = math.log(params.amplitude)
    total = 0.0
    mv = train.mark_values()
    for n, t in enumerate(train.times):
        d = int(np.argmax(mv[n]))
        if d in dims:
            u = membrane_potentials(t, train.history_before(t), params)
            total = total + la + ad.log_sigmoid(u[d])
    comp = 0.0
    for t in mc_times:
        u = membrane_potentials(t, train.history_before(t), params)
        for d in dims:
            comp = comp + ad.sigmoid_amp(u[d], params.amplitude)
    return total - comp * (train.horizon / len(mc_times))


def log_lik_kernel(params: SNNParams, train: SpikeTrain, mc_times, dims, grad: bool = True):
    """Kernel twin of :func:`log_lik_tape`; returns ``(value, flat gradient or None)``."""
    dims = np.asarray(sorted(dims), dtype=np.int64)
    D = params.dim
    mv = train.mark_values()
    ev_dim = np.argmax(mv, axis=1) if len(train) else np.zeros(0, dtype=np.int64)
    sel = np.isin(ev_dim, dims)
    ev_t = train.times[sel]
    ev_d = ev_dim[sel]
    mc_times = np.asarray(mc_times, dtype=np.float64)
    qt = np.concatenate([ev_t, mc_times])
    U = kernels.potentials(qt, train.times, mv, params.u_bar, params.weights, params.kernel_centers)
    ne = len(ev_t)
    u_ev = U[np.arange(ne), ev_d]
    u_mc = U[ne:][:, dims]
    scale = train.horizon / len(mc_times)
    ls_mc = log_sigmoid_array(u_mc)
    value = (ne * math.log(params.amplitude) + float(np.sum(log_sigmoid_array(u_ev)))
             - scale * params.amplitude * float(np.sum(np.exp(ls_mc))))
    if not grad:
        return value, None
    gU = np.zeros((len(qt), D))
    gU[np.arange(ne), ev_d] = np.exp(log_sigmoid_array(-u_ev))
    gU[ne:, dims] = -scale * params.amplitude * np.exp(ls_mc + log_sigmoid_array(-u_mc))
    g_ubar, g_W = kernels.potentials_backward(qt, train.times, mv, params.kernel_centers, gU)
    return value, np.concatenate([g_ubar, g_W.ravel()])


def joint_log_lik_dsnn(theta: SNNParams, observed: SpikeTrain, hidden: DiffTrain, config: DppConfig,
                       M: int | None = None, rng: np.random.Generator | None = None,
                       mc_times=None):
    """Joint log-density of observed one-hot events and relaxed hidden events.

    Observed events use the plain intensity, hidden events the relaxed one;
    the hidden compensator is exactly ``lambda_bar * T`` and the observed
    compensator is a Monte-Carlo estimate.  Differentiable in ``theta`` and,
    through the hidden marks, in whatever produced them.
    """
    if mc_times is None:
        if M is None or rng is None:
            raise ValueError("pass mc_times or both M and rng")
        mc_times = rng.uniform(0.0, observed.horizon, M)
    merged = observed.merge(hidden)
    obs = list(theta.observable)
    model = HiddenSNNModel(theta, config.lambda_bar)
    la = math.log(theta.amplitude)
    total = 0.0
    for t, mark in zip(observed.times, observed.mark_values()):
        d = int(np.argmax(mark))
        u = membrane_potentials(t, merged.history_before(t), theta)
        total = total + la + ad.log_sigmoid(u[d])
    for t, row in zip(hidden.times, hidden.log_marks):
        total = total + dpp_log_intensity(t, row, merged.history_before(t), model, config)
    comp = 0.0
    for t in mc_times:
        u = membrane_potentials(t, merged.history_before(t), theta)
        for d in obs:
            comp = comp + ad.sigmoid_amp(u[d], theta.amplitude)
    return total - config.lambda_bar * observed.horizon - comp * (observed.horizon / len(mc_times))


# -- score-function estimator ---------------------------------------------


def score_estimate(theta: SNNParams, phi: SNNParams, observed: SpikeTrain, config: TrainConfig,
                   rng: np.random.Generator | None = None, noise: ScoreNoise | None = None) -> GradientEstimate:
    bar = config.bound(phi)
    if noise is None:
        noise = ScoreNoise.draw(bar, observed.horizon, config.compensator_samples, rng)
    hidden = sample_hidden(phi, observed, None, bar, noise.thinning)
    merged = observed.merge(hidden)
    all_dims = range(theta.dim)
    log_p, g_p = log_lik_kernel(theta, merged, noise.mc_elbo, all_dims, grad=True)
    log_q, _ = log_lik_kernel(phi, merged, noise.mc_elbo, phi.hidden, grad=False)
    ell = log_p - log_q
    _, g_q = log_lik_kernel(phi, merged, noise.mc_score, phi.hidden, grad=True)
    return GradientEstimate(ell, g_p, g_q * (ell - 1.0))


def score_estimate_tape(theta, phi, observed, config, noise: ScoreNoise) -> GradientEstimate:
    """Tape reference for :func:`score_estimate` under the same noise."""
    bar = config.bound(phi)
    hidden = sample_hidden(phi, observed, None, bar, noise.thinning)
    merged = observed.merge(hidden)
    tape = ad.Tape()
    th = theta.lift(tape)
    log_p = log_lik_tape(th, merged, noise.mc_elbo, range(theta.dim))
    g_p = th.gradient_of(tape.backward(log_p))
    log_q = log_lik_tape(phi, merged, noise.mc_elbo, phi.hidden)
    ell = ad.value(log_p) - log_q
    tape = ad.Tape()
    ph = phi.lift(tape)
    score = log_lik_tape(ph, merged, noise.mc_score, phi.hidden)
    g_q = ph.gradient_of(tape.backward(score))
    return GradientEstimate(ell, g_p, g_q * (ell - 1.0))


# -- path-wise estimator ---------------------------------------------------


def pathwise_estimate(theta: SNNParams, phi: SNNParams, observed: SpikeTrain, config: TrainConfig,
                      rng: np.random.Generator | None = None, noise: PathwiseNoise | None = None,
                      temperature: float | None = None) -> GradientEstimate:
    hidden = np.asarray(phi.hidden, dtype=np.int64)
    if hidden.size == 0:
        mc = noise.mc if noise is not None else rng.uniform(0.0, observed.horizon, config.compensator_samples)
        value, g = log_lik_kernel(theta, observed, mc, range(theta.dim))
        return GradientEstimate(value, g, np.zeros(phi.n_free))
    dcfg = config.dpp(phi, temperature)
    if noise is None:
        noise = PathwiseNoise.draw(dcfg.lambda_bar, observed.horizon, len(hidden),
                                   config.compensator_samples, rng)
    r = kernels.pathwise(noise.dpp.proposals, noise.dpp.gumbel_uniforms, observed.times,
                         observed.mark_values(), noise.mc, theta.u_bar, theta.weights, phi.u_bar,
                         phi.weights, theta.kernel_centers, theta.amplitude, dcfg.lambda_bar,
                         dcfg.temperature, observed.horizon, hidden,
                         np.asarray(theta.observable, dtype=np.int64))
    return GradientEstimate(r["elbo"], np.concatenate([r["g_theta_ubar"], r["g_theta_W"].ravel()]),
                            np.concatenate([r["g_phi_ubar"], r["g_phi_W"].ravel()]))


def pathwise_elbo_tape(theta: SNNParams, phi: SNNParams, observed: SpikeTrain, dcfg: DppConfig,
                       noise: PathwiseNoise, differentiate: bool = True):
    """Single-sample relaxed ELBO on the tape; returns ``(GradientEstimate, hidden DiffTrain)``.

    With ``differentiate=False`` only the value is computed (plain floats).
    """
    tape = ad.Tape() if differentiate else None
    th = theta.lift(tape) if differentiate else theta
    ph = phi.lift(tape) if differentiate else phi
    q_model = HiddenSNNModel(ph, dcfg.lambda_bar)
    hid = dpp_sample(q_model, dcfg, observed.horizon, clamped_history=observed, noise=noise.dpp)
    log_q = dpp_log_density(hid, q_model, dcfg, clamped_history=observed)
    log_p = joint_log_lik_dsnn(th, observed, hid, dcfg, mc_times=noise.mc)
    elbo = log_p - log_q
    if not differentiate:
        n = theta.n_free
        return GradientEstimate(float(elbo), np.zeros(n), np.zeros(n)), hid
    grads = tape.backward(elbo)
    return GradientEstimate(ad.value(elbo), th.gradient_of(grads), ph.gradient_of(grads)), hid


# -- generic entry points --------------------------------------------------


def estimate(theta, phi, observed, config: TrainConfig, rng, temperature=None) -> GradientEstimate:
    """Average of ``elbo_samples`` estimates with the configured estimator."""
    acc = None
    for _ in range(config.elbo_samples):
        if config.estimator == "score":
            e = score_estimate(theta, phi, observed, config, rng)
        else:
            e = pathwise_estimate(theta, phi, observed, config, rng, temperature=temperature)
        if acc is None:
            acc = e
        else:
            acc = GradientEstimate(acc.elbo + e.elbo, acc.g_theta + e.g_theta, acc.g_phi + e.g_phi)
    k = config.elbo_samples
    return GradientEstimate(acc.elbo / k, acc.g_theta / k, acc.g_phi / k)


def elbo_estimate(theta, phi, observed, config: TrainConfig, rng) -> float:
    return estimate(theta, phi, observed, config, rng).elbo


def grad_theta(theta, phi, observed, config: TrainConfig, rng) -> np.ndarray:
    return estimate(theta, phi, observed, config, rng).g_theta


def grad_phi_score(theta, phi, observed, config: TrainConfig, rng) -> np.ndarray:
    cfg = TrainConfig(**{**asdict(config), "estimator": "score"})
    return estimate(theta, phi, observed, cfg, rng).g_phi


def grad_phi_pathwise(theta, phi, observed, config: TrainConfig, rng) -> np.ndarray:
    cfg = TrainConfig(**{**asdict(config), "estimator": "pathwise"})
    return estimate(theta, phi, observed, cfg, rng).g_phi


def score_elbo(theta: SNNParams, phi: SNNParams, observed: SpikeTrain, config: TrainConfig,
               rng: np.random.Generator) -> float:
    """ELBO sample under the plain-network variational distribution (no gradients)."""
    bar = config.bound(phi)
    noise = ThinningNoise.draw(bar, observed.horizon, rng)
    mc = rng.uniform(0.0, observed.horizon, config.compensator_samples)
    hidden = sample_hidden(phi, observed, None, bar, noise)
    merged = observed.merge(hidden)
    log_p, _ = log_lik_kernel(theta, merged, mc, range(theta.dim), grad=False)
    log_q, _ = log_lik_kernel(phi, merged, mc, phi.hidden, grad=False)
    return log_p - log_q


# -- optimisation ----------------------------------------------------------


@dataclass
class AdaGradState:
    accum: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "AdaGradState":
        return cls(np.zeros(n))


def adagrad_step(params: SNNParams, grads: np.ndarray, state: AdaGradState, lr: float,
                 eps: float = 1e-10) -> tuple[SNNParams, AdaGradState]:
    """Ascent step ``p += lr * g / sqrt(G + eps)`` with ``G`` the running sum of ``g**2``."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != state.accum.shape or grads.shape != (params.n_free,):
        raise ValueError(f"gradient shape {grads.shape} does not match {params.n_free} parameters")
    accum = state.accum + grads * grads
    flat = params.flat() + lr * grads / np.sqrt(accum + eps)
    return params.from_flat(flat).project_diagonal(), AdaGradState(accum)


@dataclass
class TrainResult:
    theta: SNNParams
    phi: SNNParams
    trace: list          # mean training ELBO before training, then per epoch
    temperatures: list   # temperature used in each epoch
    epoch_seconds: list
    manifest: dict = field(default_factory=dict)


def train(config: TrainConfig, dataset: list, theta0: SNNParams, phi0: SNNParams | None = None,
          rng: np.random.Generator | None = None) -> TrainResult:
    """Per-example stochastic gradient ascent on the ELBO with AdaGrad."""
    if not dataset:
        raise ValueError("dataset is empty")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    theta = theta0.copy()
    phi = theta if config.shared else (phi0 if phi0 is not None else theta0).copy()
    st_theta = AdaGradState.zeros(theta.n_free)
    st_phi = AdaGradState.zeros(phi.n_free)
    tau = config.temperature
    trace = [float(np.mean([estimate(theta, phi, ex, config, rng, tau).elbo for ex in dataset]))]
    temps, seconds = [], []
    for _ in range(config.epochs):
        start = time.perf_counter()
        vals = []
        for i in rng.permutation(len(dataset)):
            e = estimate(theta, phi, dataset[i], config, rng, tau)
            vals.append(e.elbo)
            if config.shared:
                theta, st_theta = adagrad_step(theta, e.g_theta + e.g_phi, st_theta,
                                               config.learning_rate, config.eps)
                phi = theta
            else:
                theta, st_theta = adagrad_step(theta, e.g_theta, st_theta, config.learning_rate, config.eps)
                phi, st_phi = adagrad_step(phi, e.g_phi, st_phi, config.learning_rate, config.eps)
        seconds.append(time.perf_counter() - start)
        temps.append(tau)
        trace.append(float(np.mean(vals)))
        if config.estimator == "pathwise":
            tau *= config.anneal_ratio
    manifest = {
        "config": asdict(config),
        "seed": config.seed,
        "backend": kernels.BACKEND,
        "temperatures": temps,
        "initial_elbo": trace[0],
        "epoch_elbo": trace[1:],
        "epoch_seconds": seconds,
    }
    return TrainResult(theta, phi, trace, temps, seconds, manifest)


def evaluate(theta: SNNParams, phi: SNNParams, test: list, config: TrainConfig,
             rng: np.random.Generator) -> float:
    """Mean test ELBO under the plain-network variational distribution.

    Whatever estimator trained the parameters, they are scored the same way,
    with ``eval_samples`` hidden draws per example.
    """
    if not test:
        raise ValueError("test set is empty")
    scores = []
    for ex in test:
        scores.append(np.mean([score_elbo(theta, phi, ex, config, rng) for _ in range(config.eval_samples)]))
    return float(np.mean(scores))


def manifest_json(result: TrainResult) -> str:
    return json.dumps(result.manifest, indent=2, sort_keys=True)
