"""Text formats: spike trains as JSON Lines, parameters as JSON, configs as key=value.

Floats are written with 17 significant digits so every double survives a
write/read cycle bit for bit.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable

import numpy as np

from .point_process import SpikeTrain
from .snn import SNNParams


class ParseError(ValueError):
    """Malformed input; the message names the file and line."""


def _num(x) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialise non-finite value {x!r}")
    return format(x, ".17g")


def _dump(obj) -> str:
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_dump(v) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_dump(v)}" for k, v in obj.items()) + "}"
    return json.dumps(obj)


def train_to_line(train: SpikeTrain) -> str:
    marks = train.mark_values()
    events = ", ".join(f"[{_num(t)}, {_dump(m)}]" for t, m in zip(train.times, marks))
    return f'{{"horizon": {_num(train.horizon)}, "events": [{events}]}}'


def train_from_line(line: str, dim: int | None = None) -> SpikeTrain:
    obj = json.loads(line)
    if not isinstance(obj, dict) or "horizon" not in obj or "events" not in obj:
        raise ValueError('expected an object with "horizon" and "events"')
    horizon = float(obj["horizon"])
    events = obj["events"]
    if not events:
        if dim is None:
            raise ValueError("empty train needs an explicit mark dimension")
        return SpikeTrain.empty(dim, horizon)
    times = np.array([float(e[0]) for e in events])
    marks = np.array([[float(p) for p in e[1]] for e in events])
    if dim is not None and marks.shape[1] != dim:
        raise ValueError(f"marks have dimension {marks.shape[1]}, expected {dim}")
    return SpikeTrain(times, marks, horizon)


def write_trains(path, trains: Iterable[SpikeTrain]) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for tr in trains:
            fh.write(train_to_line(tr) + "\n")


def read_trains(path, dim: int | None = None) -> list[SpikeTrain]:
    path = Path(path)
    out = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(train_from_line(line, dim))
            except (ValueError, TypeError, IndexError, KeyError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return out


def params_to_dict(params: SNNParams) -> dict:
    return {
        "u_bar": params.u_bar.tolist(),
        "weights": params.weights.tolist(),
        "kernel_centers": params.kernel_centers.tolist(),
        "amplitude": float(params.amplitude),
        "observable": list(params.observable),
    }


def params_from_dict(obj: dict) -> SNNParams:
    missing = {"u_bar", "weights", "kernel_centers", "amplitude", "observable"} - set(obj)
    if missing:
        raise ValueError(f"parameter file lacks keys {sorted(missing)}")
    return SNNParams(np.asarray(obj["u_bar"], dtype=np.float64), np.asarray(obj["weights"], dtype=np.float64),
                     np.asarray(obj["kernel_centers"], dtype=np.float64), float(obj["amplitude"]),
                     tuple(int(d) for d in obj["observable"]))


def write_params(path, params: SNNParams) -> None:
    Path(path).write_text(_dump(params_to_dict(params)) + "\n", encoding="utf-8")


def read_params(path) -> SNNParams:
    path = Path(path)
    try:
        return params_from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (ValueError, TypeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc


def read_config(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment.  Values stay strings."""
    path = Path(path)
    out = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise ParseError(f"{path}:{lineno}: empty key")
            out[key] = value
    return out


def write_config(path, values: dict) -> None:
    lines = []
    for k, v in values.items():
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
