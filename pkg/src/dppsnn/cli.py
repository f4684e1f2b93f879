"""Command-line driver: generate data, train, evaluate and run the experiments.

Every command prints and logs its effective configuration and seed; rerunning
with those values reproduces the outputs (wall-clock columns aside).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import kernels
from .learning import evaluate, train
from .serialization import (ParseError, read_config, read_params, read_trains, write_config,
                            write_params, write_trains)

log = logging.getLogger("dppsnn")


def _config(args) -> ex.ExperimentConfig:
    raw = read_config(args.config) if args.config else {}
    overrides = {
        "seed": args.seed, "estimator": getattr(args, "estimator", None), "epochs": args.epochs,
        "learning_rate": args.lr, "temperature": args.temperature, "anneal_ratio": args.anneal,
    }
    for k, v in overrides.items():
        if v is not None:
            raw[k] = v
    return ex.ExperimentConfig.from_mapping(raw)


def _announce(command: str, cfg: ex.ExperimentConfig) -> None:
    payload = {"command": command, "seed": cfg.seed, "backend": kernels.BACKEND, "config": cfg.to_dict()}
    text = json.dumps(payload, sort_keys=True)
    log.info("effective config %s", text)
    print(text)


def _write_csv(path, rows: list[dict], columns: list[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def _load_data(path, name: str, dim: int) -> list:
    p = Path(path)
    if p.is_dir():
        p = p / name
    trains = read_trains(p, dim)
    if not trains:
        raise ParseError(f"{p}: no trains")
    return trains


def cmd_generate(args) -> int:
    cfg = _config(args)
    _announce("generate", cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    r_true, r_train, r_test = ex._spawn(cfg.seed, 3)
    truth = ex.make_params(cfg, r_true)
    full_train = ex.generate(truth, cfg.n_train, cfg.horizon, r_train)
    full_test = ex.generate(truth, cfg.n_test, cfg.horizon, r_test)
    write_trains(out / "train.jsonl", ex.observe(full_train, truth))
    write_trains(out / "test.jsonl", ex.observe(full_test, truth))
    write_trains(out / "full_train.jsonl", full_train)
    write_trains(out / "full_test.jsonl", full_test)
    write_params(out / "truth.json", truth)
    write_config(out / "config.txt", cfg.to_dict())
    rates = np.mean([np.bincount(t.dims(), minlength=truth.dim) / cfg.horizon for t in full_train], axis=0)
    log.info("mean rate per neuron %s", rates.tolist())
    print(f"wrote {cfg.n_train} training and {cfg.n_test} test trains to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    _announce("train", cfg)
    data = _load_data(args.data, "train.jsonl", cfg.D)
    r_init, r_fit = ex._spawn(cfg.seed, 2)
    init = read_params(args.init) if args.init else ex.make_params(cfg, r_init)
    phi0 = read_params(args.init_phi) if args.init_phi else None
    tcfg = cfg.train_config()
    res = train(tcfg, data, init, phi0, r_fit)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_params(out / "params.json", res.theta)
    write_params(out / "phi.json", res.phi)
    manifest = dict(res.manifest)
    manifest["experiment"] = cfg.to_dict()
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_csv(out / "trace.csv",
               [{"epoch": e, "temperature": t, "mean_train_elbo": v, "seconds": s}
                for e, (t, v, s) in enumerate(zip(res.temperatures, res.trace[1:], res.epoch_seconds), 1)],
               ["epoch", "temperature", "mean_train_elbo", "seconds"])
    print(f"initial ELBO {res.trace[0]:.6g}, final epoch ELBO {res.trace[-1]:.6g}; wrote {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    _announce("eval", cfg)
    theta = read_params(args.params)
    phi = read_params(args.phi) if args.phi else theta
    if theta.dim != cfg.D or phi.dim != theta.dim:
        raise ParseError(f"parameter dimension {theta.dim} does not match config D={cfg.D}")
    data = _load_data(args.data, "test.jsonl", theta.dim)
    score = evaluate(theta, phi, data, cfg.train_config(), np.random.default_rng(cfg.seed))
    if args.out:
        _write_csv(args.out, [{"n_examples": len(data), "mean_elbo": score}], ["n_examples", "mean_elbo"])
    print(f"mean test ELBO {score:.10g}")
    return 0


def cmd_grad_variance(args) -> int:
    cfg = _config(args)
    _announce("grad-variance", cfg)
    data = _load_data(args.data, "train.jsonl", cfg.D) if args.data else None
    rows = ex.variance_study(cfg, cfg.seed, args.workers, data=data)
    _write_csv(args.out, rows, ["estimator", "n_estimates", "mean_std"])
    for r in rows:
        print(f"{r['estimator']}: mean std {r['mean_std']:.6g} over {r['n_estimates']} estimates")
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    _announce("bench", cfg)
    data = _load_data(args.data, "train.jsonl", cfg.D) if args.data else None
    rows, ratio = ex.bench(cfg, cfg.seed, args.workers, data=data)
    _write_csv(args.out, rows, ["amplitude", "method", "seconds_per_epoch"])
    log.info("pathwise/score time ratio %.4g", ratio)
    print(f"mean pathwise/score per-epoch time ratio {ratio:.4g}")
    return 0


def cmd_predictive(args) -> int:
    cfg = _config(args)
    _announce("predictive", cfg)
    rows = ex.predictive_sweep(cfg, cfg.seed, args.workers)
    _write_csv(args.out, rows, ["setting", "n_train", "estimator", "test_elbo", "final_train_elbo"])
    for r in ex.summarize_predictive(rows):
        print(f"n_train={r['n_train']} {r['estimator']}: mean test ELBO {r['mean_test_elbo']:.6g}")
    return 0


# per-command output defaults; the shared --out action cannot carry them
DEFAULT_OUT = {"generate": "data", "train": "run", "grad-variance": "grad_variance.csv",
               "bench": "bench.csv", "predictive": "predictive.csv"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output path")
    common.add_argument("--data", help="JSON Lines file or a directory written by generate")
    common.add_argument("--epochs", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--temperature", type=float)
    common.add_argument("--anneal", type=float)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--estimator", choices=("score", "pathwise"))
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dppsnn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("generate", parents=[common], help="sample synthetic trains from a random network")
    g.set_defaults(fn=cmd_generate)
    t = sub.add_parser("train", parents=[common], help="fit a network to observed trains")
    t.add_argument("--init", help="initial parameter file (resume)")
    t.add_argument("--init-phi", help="initial variational parameter file")
    t.set_defaults(fn=cmd_train)
    e = sub.add_parser("eval", parents=[common], help="mean test ELBO of a parameter file")
    e.add_argument("--params", required=True)
    e.add_argument("--phi", help="variational parameters (defaults to --params)")
    e.set_defaults(fn=cmd_eval)
    v = sub.add_parser("grad-variance", parents=[common], help="spread of both gradient estimators")
    v.set_defaults(fn=cmd_grad_variance)
    b = sub.add_parser("bench", parents=[common], help="per-epoch time of both estimators across amplitudes")
    b.set_defaults(fn=cmd_bench)
    s = sub.add_parser("predictive", parents=[common], help="held-out ELBO of both estimators")
    s.set_defaults(fn=cmd_predictive)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.out is None:
        args.out = DEFAULT_OUT.get(args.command)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    if args.command in ("train", "eval") and args.data is None:
        print(f"error: --data is required for {args.command}", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except (ParseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
