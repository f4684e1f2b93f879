"""Time the compiled kernels against the pure-Python fallback.

Each kernel runs on the same inputs under both backends; the script checks
the outputs agree before reporting median wall-clock times and speed-ups.

    python3 benchmarks/compare_backends.py --repeats 5 --out backends.csv
"""
import argparse
import csv
import statistics
import sys
import time

import numpy as np

from dppsnn import kernels
from dppsnn.learning import PathwiseNoise
from dppsnn.snn import ThinningNoise, init_params, sample_network


def cases(horizon: float, seed: int):
    rng = np.random.default_rng(seed)
    p = init_params(rng, 6, 2, 5.0, (0.0, 10.0), (0, 1))
    train = sample_network(p, horizon, rng)
    obs = train.restrict(p.observable)
    qt = rng.uniform(0.0, horizon, 2000)
    gU = rng.normal(size=(len(qt), p.dim))
    hidden = np.asarray(p.hidden, dtype=np.int64)
    bar = p.amplitude * len(hidden)
    thin = ThinningNoise.draw(bar, horizon, rng)
    pw = PathwiseNoise.draw(bar, horizon, len(hidden), 100, rng)
    phi = init_params(rng, 6, 2, 5.0, (0.0, 10.0), (0, 1))
    return {
        "potentials": ("potentials", (qt, train.times, train.mark_values(), p.u_bar, p.weights, p.kernel_centers)),
        "potentials_backward": ("potentials_backward", (qt, train.times, train.mark_values(), p.kernel_centers, gU)),
        "thin_hidden": ("thin_hidden", (thin.proposals, thin.uniforms, obs.times, obs.mark_values(), p.u_bar,
                                        p.weights, p.kernel_centers, p.amplitude, bar, hidden)),
        "pathwise": ("pathwise", (pw.dpp.proposals, pw.dpp.gumbel_uniforms, obs.times, obs.mark_values(), pw.mc,
                                  p.u_bar, p.weights, phi.u_bar, phi.weights, p.kernel_centers, p.amplitude,
                                  bar, 0.3, horizon, hidden, np.asarray(p.observable, dtype=np.int64))),
    }


def _flatten(out):
    if isinstance(out, dict):
        return [np.asarray(out[k], dtype=np.float64).ravel() for k in sorted(out)]
    if isinstance(out, tuple):
        return [np.asarray(o, dtype=np.float64).ravel() for o in out]
    return [np.asarray(out, dtype=np.float64).ravel()]


def timed(fn, args, repeats):
    times, out = [], None
    for _ in range(repeats):
        start = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - start)
    return statistics.median(times), out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--horizon", type=float, default=50.0)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="optional CSV path")
    args = ap.parse_args(argv)
    backends = kernels.backends()
    if "cython" not in backends:
        print("compiled kernels are not built; nothing to compare", file=sys.stderr)
        return 1
    rows = []
    print(f"{'kernel':<22}{'python (s)':>12}{'cython (s)':>12}{'speed-up':>10}")
    for name, (attr, fn_args) in cases(args.horizon, args.seed).items():
        t_py, o_py = timed(getattr(backends["python"], attr), fn_args, args.repeats)
        t_cy, o_cy = timed(getattr(backends["cython"], attr), fn_args, args.repeats)
        for a, b in zip(_flatten(o_py), _flatten(o_cy)):
            np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9, err_msg=name)
        rows.append({"kernel": name, "python_seconds": t_py, "cython_seconds": t_cy, "speedup": t_py / t_cy})
        print(f"{name:<22}{t_py:>12.4g}{t_cy:>12.4g}{t_py / t_cy:>10.1f}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
