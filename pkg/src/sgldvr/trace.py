"""Run traces and their CSV + JSON-sidecar persistence.

Reals are written with 17 significant digits, which round-trips every
IEEE-754 double exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from . import __version__
from .errors import TraceParseError


def provenance() -> str:
    return f"sgldvr {__version__}"


def fmt(v: float) -> str:
    return format(float(v), ".17g")


@dataclass(frozen=True)
class RunTrace:
    t: np.ndarray
    f: np.ndarray
    grad_norm: np.ndarray
    iterates: np.ndarray | None = None
    config: dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    objective: dict[str, Any] = field(default_factory=dict)
    provenance: str = ""
    trial: int = 0
    constants: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.t)
        if t.size and np.any(np.diff(t) <= 0):
            raise ValueError("trace times must be strictly increasing")
        for name in ("f", "grad_norm"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"trace column {name} contains non-finite values")

    def __len__(self) -> int:
        return int(np.asarray(self.t).size)

    @property
    def final_x(self) -> np.ndarray | None:
        return None if self.iterates is None else self.iterates[-1]

    def sidecar(self) -> dict[str, Any]:
        return {
            "config": self.config,
            "seed": self.seed,
            "trial": self.trial,
            "objective": self.objective,
            "provenance": self.provenance,
            "constants": self.constants,
        }

    def equals(self, other: "RunTrace") -> bool:
        """Bitwise equality of every column plus identical metadata."""
        same_cols = all(
            np.array_equal(np.asarray(getattr(self, c)), np.asarray(getattr(other, c)))
            for c in ("t", "f", "grad_norm")
        )
        if (self.iterates is None) != (other.iterates is None):
            return False
        if self.iterates is not None and not np.array_equal(self.iterates, other.iterates):
            return False
        return same_cols and json.dumps(self.sidecar(), sort_keys=True) == json.dumps(other.sidecar(), sort_keys=True)


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_trace(trace: RunTrace, path) -> None:
    path = Path(path)
    header = ["t", "f", "grad_norm"]
    if trace.iterates is not None:
        header += [f"x_{j}" for j in range(trace.iterates.shape[1])]
    lines = [",".join(header)]
    for k in range(len(trace)):
        row = [str(int(trace.t[k])), fmt(trace.f[k]), fmt(trace.grad_norm[k])]
        if trace.iterates is not None:
            row += [fmt(v) for v in trace.iterates[k]]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")
    sidecar_path(path).write_text(json.dumps(trace.sidecar(), indent=2, sort_keys=True) + "\n")


def _parse_float(text: str, path, line: int, col: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise TraceParseError(path, line, col, f"not a number: {text!r}") from None
    if not math.isfinite(v):
        raise TraceParseError(path, line, col, f"non-finite value {text!r}")
    return v


def read_trace(path) -> RunTrace:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise TraceParseError(path, 1, 1, "empty file")
    header = lines[0].split(",")
    if header[:3] != ["t", "f", "grad_norm"]:
        raise TraceParseError(path, 1, 1, f"expected header 't,f,grad_norm[,x_0..]', got {lines[0]!r}")
    extra = header[3:]
    if extra != [f"x_{j}" for j in range(len(extra))]:
        raise TraceParseError(path, 1, len(",".join(header[:3])) + 2, "iterate columns must be x_0..x_{d-1}")
    ts, fs, gs, xs = [], [], [], []
    for lineno, text in enumerate(lines[1:], start=2):
        fields = text.split(",")
        if len(fields) != len(header):
            raise TraceParseError(path, lineno, 1, f"expected {len(header)} fields, got {len(fields)}")
        cols = np.cumsum([0] + [len(s) + 1 for s in fields]) + 1
        try:
            t = int(fields[0])
        except ValueError:
            raise TraceParseError(path, lineno, 1, f"not an integer: {fields[0]!r}") from None
        if ts and t <= ts[-1]:
            raise TraceParseError(path, lineno, 1, f"t={t} does not increase (previous t={ts[-1]})")
        ts.append(t)
        fs.append(_parse_float(fields[1], path, lineno, int(cols[1])))
        gs.append(_parse_float(fields[2], path, lineno, int(cols[2])))
        if extra:
            xs.append([_parse_float(s, path, lineno, int(c)) for s, c in zip(fields[3:], cols[3:])])
    meta: dict[str, Any] = {}
    side = sidecar_path(path)
    if side.exists():
        try:
            meta = json.loads(side.read_text())
        except json.JSONDecodeError as exc:
            raise TraceParseError(side, exc.lineno, exc.colno, exc.msg) from None
    d = len(extra)
    return RunTrace(
        t=np.array(ts, dtype=np.int64),
        f=np.array(fs, dtype=float),
        grad_norm=np.array(gs, dtype=float),
        iterates=np.array(xs, dtype=float).reshape(len(xs), d) if extra else None,
        config=meta.get("config", {}),
        seed=meta.get("seed", 0),
        objective=meta.get("objective", {}),
        provenance=meta.get("provenance", ""),
        trial=meta.get("trial", 0),
        constants=meta.get("constants", {}),
    )


def summarize(trace: RunTrace, levels: Iterable[float] = ()) -> dict[str, Any]:
    """Aggregate statistics; first passage is the first recorded t with f <= level.

    A passage time is exact only when the stride is 1; otherwise it is an upper
    bound on the true passage time and ``stride_limited`` is set.
    """
    if len(trace) == 0:
        raise ValueError("cannot summarize an empty trace")
    t = np.asarray(trace.t)
    f = np.asarray(trace.f)
    stride_limited = bool(t.size > 1 and np.any(np.diff(t) > 1))
    passages: dict[str, int | None] = {}
    for level in levels:
        hit = np.nonzero(f <= level)[0]
        passages[repr(float(level))] = int(t[hit[0]]) if hit.size else None
    return {
        "n_records": int(t.size),
        "min_f": float(f.min()),
        "median_f": float(np.median(f)),
        "min_grad_norm": float(np.min(trace.grad_norm)),
        "first_passage": passages,
        "stride_limited": stride_limited,
    }
