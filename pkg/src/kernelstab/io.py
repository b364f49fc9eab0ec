"""File formats: point CSV, update traces, kernel id lists."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import BadParams, ParseError

HEADER = re.compile(r"^d=(\d+),n=(\d+)$")


def write_points(path, X: np.ndarray) -> None:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    lines = [f"d={d},n={n}"]
    lines += [",".join("%.17g" % v for v in row) for row in X]
    Path(path).write_text("\n".join(lines) + "\n")


def read_points(path) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e}") from e
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError(f"{path}: empty file")
    m = HEADER.match(lines[0])
    if not m:
        raise ParseError(f"{path}:1: expected header 'd=<int>,n=<int>'")
    d, n = int(m.group(1)), int(m.group(2))
    rows = lines[1:]
    if len(rows) != n:
        raise ParseError(f"{path}: header says n={n}, found {len(rows)} rows")
    X = np.empty((n, d))
    for i, row in enumerate(rows):
        parts = row.split(",")
        if len(parts) != d:
            raise ParseError(f"{path}:{i + 2}: expected {d} values")
        try:
            X[i] = [float(p) for p in parts]
        except ValueError as e:
            raise ParseError(f"{path}:{i + 2}: {e}") from e
        if not np.all(np.isfinite(X[i])):
            raise ParseError(f"{path}:{i + 2}: non-finite coordinate")
    return X


@dataclass(frozen=True)
class TraceEvent:
    op: str
    x: tuple[float, ...] | None = None
    id: int | None = None

    def to_json(self) -> str:
        if self.op == "+":
            return json.dumps({"op": "+", "x": list(self.x)})
        return json.dumps({"op": "-", "id": self.id})


def write_trace(path, events: Iterable[TraceEvent]) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(ev.to_json() + "\n")


def parse_trace_line(line: str, lineno: int, d: int | None) -> TraceEvent:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(f"line {lineno}: {e}") from e
    op = obj.get("op") if isinstance(obj, dict) else None
    if op == "+":
        x = obj.get("x")
        if not isinstance(x, list) or (d is not None and len(x) != d):
            raise ParseError(f"line {lineno}: insert needs {d or 'd'} coordinates")
        try:
            coords = tuple(float(v) for v in x)
        except (TypeError, ValueError) as e:
            raise ParseError(f"line {lineno}: {e}") from e
        if not all(math.isfinite(v) for v in coords):
            raise ParseError(f"line {lineno}: non-finite coordinate")
        return TraceEvent("+", x=coords)
    if op == "-":
        pid = obj.get("id")
        if not isinstance(pid, int) or isinstance(pid, bool) or pid < 0:
            raise ParseError(f"line {lineno}: delete needs a non-negative integer id")
        return TraceEvent("-", id=pid)
    raise ParseError(f"line {lineno}: op must be '+' or '-'")


def read_trace(path) -> list[TraceEvent]:
    """Parse a JSONL trace and check that deletions name live ids."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e}") from e
    events = []
    live: set[int] = set()
    next_id = 0
    d = None
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        ev = parse_trace_line(line, lineno, d)
        if ev.op == "+":
            d = len(ev.x)
            live.add(next_id)
            next_id += 1
        else:
            if ev.id not in live:
                raise ParseError(f"line {lineno}: id {ev.id} is not live")
            live.discard(ev.id)
        events.append(ev)
    return events


def is_trace_file(path) -> bool:
    p = Path(path)
    if p.suffix in (".jsonl", ".trace"):
        return True
    try:
        with open(p) as fh:
            return fh.read(1) == "{"
    except OSError:
        return False


def read_ids(path) -> list[int]:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e}") from e
    text = "\n".join(ln for ln in text.splitlines() if not ln.lstrip().startswith("#"))
    if text.strip().startswith("["):
        try:
            ids = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: {e}") from e
    else:
        ids = [tok for tok in re.split(r"[\s,]+", text) if tok]
    try:
        return [int(i) for i in ids]
    except (TypeError, ValueError) as e:
        raise ParseError(f"{path}: bad id: {e}") from e


def write_ids(path, ids: Iterable[int]) -> None:
    Path(path).write_text("\n".join(str(i) for i in sorted(ids)) + "\n")


# ---------------------------------------------------------------------------
# Point and trace generators


def gen_points(kind: str, n: int, d: int, seed: int | None = 0, eps: float = 0.2) -> np.ndarray:
    from .experiments import gen_cyclic_perturbed, gen_sphere

    if n < 0:
        raise BadParams("n must be non-negative")
    rng = np.random.default_rng(seed)
    if kind == "uniform-box":
        return rng.uniform(-1, 1, size=(n, d))
    if kind == "ball":
        return ball_points(rng, n, d)
    if kind == "sphere":
        return gen_sphere(n, d, seed).points.arrays()[1]
    if kind == "cyclic-perturbed":
        return gen_cyclic_perturbed(n, d, eps, seed or 0).points.arrays()[1]
    raise BadParams(f"unknown point kind {kind!r}")


def ball_points(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    X = rng.normal(size=(n, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    return X * rng.random((n, 1)) ** (1 / d)


def _draw(kind: str, rng: np.random.Generator, d: int) -> np.ndarray:
    if kind == "uniform-box":
        return rng.uniform(-1, 1, size=d)
    if kind == "ball":
        return ball_points(rng, 1, d)[0]
    raise BadParams(f"traces draw from 'uniform-box' or 'ball', not {kind!r}")


def gen_trace(
    trace: str, n: int, d: int, seed: int | None = 0, p_del: float = 0.3, kind: str = "ball"
) -> list[TraceEvent]:
    """n update events.

    ``insert-only``: n insertions.  ``insert-delete-mix``: each event deletes
    a uniformly random live point with probability ``p_del`` (insert when
    nothing is live).  ``adversarial-outside``: like the mix, but the k-th
    insertion lands on the sphere of radius 1 + 2k/n, outside everything
    inserted so far.
    """
    if not (0 <= p_del < 1):
        raise BadParams("p_del must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    if trace == "insert-only":
        p_del = 0.0
    elif trace not in ("insert-delete-mix", "adversarial-outside"):
        raise BadParams(f"unknown trace kind {trace!r}")
    events: list[TraceEvent] = []
    live: list[int] = []
    next_id = 0
    for k in range(n):
        if live and rng.random() < p_del:
            j = int(rng.integers(len(live)))
            live[j], live[-1] = live[-1], live[j]
            events.append(TraceEvent("-", id=live.pop()))
            continue
        if trace == "adversarial-outside":
            u = rng.normal(size=d)
            x = u / np.linalg.norm(u) * (1 + 2 * k / max(n, 1))
        else:
            x = _draw(kind, rng, d)
        events.append(TraceEvent("+", x=tuple(float(v) for v in x)))
        live.append(next_id)
        next_id += 1
    return events
