"""Synthetic-data experiments: gradient variance, predictive ELBO and timing.

Every experiment takes an :class:`ExperimentConfig` and a seed, derives all
randomness from ``numpy.random.SeedSequence`` spawns and returns plain rows
ready for CSV output.  Independent runs can be spread over a process pool.
"""
from __future__ import annotations

import dataclasses
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from .learning import TrainConfig, estimate, evaluate, train
from .point_process import SpikeTrain
from .snn import SNNParams, init_params, sample_network


@dataclass
class ExperimentConfig:
    D: int = 6
    n_observable: int = 2
    L: int = 2
    kernel_centers: tuple = (0.0, 10.0)
    amplitude: float = 5.0
    horizon: float = 50.0
    n_train: int = 10
    n_test: int = 100
    n_param_settings: int = 5
    train_sizes: tuple = (10, 50, 200)
    n_variance_estimates: int = 1000
    bench_amplitudes: tuple = tuple(range(1, 21))
    # training
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

    def __post_init__(self):
        self.kernel_centers = tuple(float(c) for c in self.kernel_centers)
        self.train_sizes = tuple(int(n) for n in self.train_sizes)
        self.bench_amplitudes = tuple(float(a) for a in self.bench_amplitudes)
        if len(self.kernel_centers) != self.L:
            raise ValueError(f"expected {self.L} kernel centres, got {len(self.kernel_centers)}")
        if not 0 <= self.n_observable <= self.D:
            raise ValueError("n_observable must lie in [0, D]")
        if not self.horizon > 0.0:
            raise ValueError("horizon must be positive")
        self.train_config()

    @property
    def observable(self) -> tuple:
        return tuple(range(self.n_observable))

    def train_config(self, **overrides) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        vals = {k: v for k, v in dataclasses.asdict(self).items() if k in names}
        vals.update(overrides)
        return TrainConfig(**vals)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, raw: dict) -> "ExperimentConfig":
        """Build from string values (config file) or typed values, rejecting unknown keys."""
        kinds = {f.name: f for f in fields(cls)}
        unknown = set(raw) - set(kinds)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        defaults = cls()
        vals = {}
        for k, v in raw.items():
            vals[k] = _coerce(v, getattr(defaults, k), k)
        return cls(**vals)


def _coerce(value, default, key):
    if not isinstance(value, str):
        return value
    text = value.strip()
    if text.lower() in ("none", "null", ""):
        return None
    if key == "share_phi_theta":
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(default, tuple):
        return tuple(float(x) if "." in x or "e" in x.lower() else int(x)
                     for x in text.replace(" ", "").split(",") if x)
    if isinstance(default, bool):
        return text.lower() in ("true", "1", "yes")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float) or key == "lambda_bar":
        return float(text)
    return text


def make_params(cfg: ExperimentConfig, rng: np.random.Generator, amplitude: float | None = None) -> SNNParams:
    a = cfg.amplitude if amplitude is None else amplitude
    return init_params(rng, cfg.D, cfg.L, a, cfg.kernel_centers, cfg.observable)


def generate(params: SNNParams, n: int, horizon: float, rng: np.random.Generator) -> list[SpikeTrain]:
    """``n`` independent full-network trains."""
    return [sample_network(params, horizon, rng) for _ in range(n)]


def observe(trains: list[SpikeTrain], params: SNNParams) -> list[SpikeTrain]:
    return [tr.restrict(params.observable) for tr in trains]


def _spawn(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _pool_map(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks))


# -- gradient variance -----------------------------------------------------


def variational_mask(params: SNNParams) -> np.ndarray:
    """Flat mask of the coordinates that drive hidden neurons."""
    m_u = np.zeros(params.dim, dtype=bool)
    m_w = np.zeros(params.weights.shape, dtype=bool)
    hid = list(params.hidden)
    m_u[hid] = True
    m_w[:, hid, :] = True
    return np.concatenate([m_u, m_w.ravel()])


def _variance_chunk(task):
    estimator, theta, data, tcfg, seeds = task
    cfg = dataclasses.replace(tcfg, estimator=estimator)
    out = np.empty((len(seeds), theta.n_free))
    for r, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        g = np.zeros(theta.n_free)
        for ex in data:
            g += estimate(theta, theta, ex, cfg, rng).g_phi
        out[r] = g
    return out


def gradient_samples(cfg: ExperimentConfig, estimator: str, seed: int, workers: int = 1,
                     data=None, theta=None) -> tuple[np.ndarray, SNNParams]:
    """``n_variance_estimates`` whole-dataset phi-gradients at a random initialisation."""
    r_true, r_data, r_init = _spawn(seed, 3)
    if data is None:
        truth = make_params(cfg, r_true)
        data = observe(generate(truth, cfg.n_train, cfg.horizon, r_data), truth)
    theta = theta if theta is not None else make_params(cfg, r_init)
    n = cfg.n_variance_estimates
    # one seed per estimate, so results do not depend on the worker count
    seeds = np.random.SeedSequence([seed, 1 if estimator == "score" else 2]).spawn(n)
    chunks = max(1, min(workers, n))
    tasks = [(estimator, theta, data, cfg.train_config(), seeds[i::chunks]) for i in range(chunks)]
    parts = _pool_map(_variance_chunk, tasks, workers)
    out = np.empty((n, theta.n_free))
    for i, part in enumerate(parts):
        out[i::chunks] = part
    return out, theta


def variance_study(cfg: ExperimentConfig, seed: int, workers: int = 1, data=None) -> list[dict]:
    """Mean per-coordinate standard deviation of both phi-gradient estimators.

    Both estimators see the same data and the same initial parameters
    (``theta == phi``); coordinates that cannot influence the hidden
    neurons are excluded (their gradient is identically zero).
    """
    rows = []
    for est in ("score", "pathwise"):
        start = time.perf_counter()
        g, theta = gradient_samples(cfg, est, seed, workers, data=data)
        std = g.std(axis=0)[variational_mask(theta)]
        rows.append({"estimator": est, "n_estimates": g.shape[0], "mean_std": float(std.mean()),
                     "seconds": time.perf_counter() - start})
    return rows


# -- predictive performance ------------------------------------------------


def _predictive_task(task):
    cfg, seed, setting, n_train = task
    r_true, r_data, r_test, r_init, r_fit, r_eval = _spawn(seed * 1_000_003 + setting, 6)
    truth = make_params(cfg, r_true)
    pool = observe(generate(truth, max(cfg.train_sizes + (n_train,)), cfg.horizon, r_data), truth)
    train_set = pool[:n_train]
    test_set = observe(generate(truth, cfg.n_test, cfg.horizon, r_test), truth)
    init = make_params(cfg, r_init)
    fit_seed = int(r_fit.integers(2**63))
    eval_seed = int(r_eval.integers(2**63))
    rows = []
    for est in ("score", "pathwise"):
        tcfg = cfg.train_config(estimator=est)
        res = train(tcfg, train_set, init, init, np.random.default_rng(fit_seed))
        score = evaluate(res.theta, res.phi, test_set, tcfg, np.random.default_rng(eval_seed))
        rows.append({"setting": setting, "n_train": n_train, "estimator": est,
                     "test_elbo": score, "final_train_elbo": res.trace[-1]})
    return rows


def predictive_sweep(cfg: ExperimentConfig, seed: int, workers: int = 1,
                     train_sizes: tuple | None = None) -> list[dict]:
    """Train both estimators from a shared initialisation and score them on held-out trains."""
    sizes = train_sizes if train_sizes is not None else cfg.train_sizes
    tasks = [(cfg, seed, s, n) for s in range(cfg.n_param_settings) for n in sizes]
    rows = [r for chunk in _pool_map(_predictive_task, tasks, workers) for r in chunk]
    return sorted(rows, key=lambda r: (r["n_train"], r["setting"], r["estimator"]))


def summarize_predictive(rows: list[dict]) -> list[dict]:
    out = []
    for n in sorted({r["n_train"] for r in rows}):
        for est in ("score", "pathwise"):
            vals = [r["test_elbo"] for r in rows if r["n_train"] == n and r["estimator"] == est]
            out.append({"n_train": n, "estimator": est, "mean_test_elbo": float(np.mean(vals)),
                        "settings": len(vals)})
    return out


# -- timing ----------------------------------------------------------------


def _bench_task(task):
    cfg, data, seed, amplitude, est = task
    r_init, r_fit = _spawn(seed + int(amplitude * 1000), 2)
    init = make_params(cfg, r_init, amplitude)
    tcfg = cfg.train_config(estimator=est)
    res = train(tcfg, data, init, init, r_fit)
    return {"amplitude": amplitude, "method": est,
            "seconds_per_epoch": float(np.mean(res.epoch_seconds)) if res.epoch_seconds else math.nan}


def bench(cfg: ExperimentConfig, seed: int, workers: int = 1, data=None) -> tuple[list[dict], float]:
    """Per-epoch training time of both estimators across amplitudes.

    One ground-truth network generates the training set; each amplitude
    re-initialises the trained networks (so the variational bound scales
    with the amplitude).  Returns rows and the mean pathwise/score ratio.
    """
    if data is None:
        r_true, r_data = _spawn(seed, 2)
        truth = make_params(cfg, r_true)
        data = observe(generate(truth, cfg.n_train, cfg.horizon, r_data), truth)
    tasks = [(cfg, data, seed, a, est) for a in cfg.bench_amplitudes for est in ("score", "pathwise")]
    rows = _pool_map(_bench_task, tasks, workers)
    rows.sort(key=lambda r: (r["amplitude"], r["method"] != "score"))
    ratios = []
    for a in cfg.bench_amplitudes:
        s = [r["seconds_per_epoch"] for r in rows if r["amplitude"] == a and r["method"] == "score"][0]
        p = [r["seconds_per_epoch"] for r in rows if r["amplitude"] == a and r["method"] == "pathwise"][0]
        ratios.append(p / s)
    return rows, float(np.mean(ratios))
