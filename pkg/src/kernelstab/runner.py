"""Replay update traces through any engine, with periodic verification."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .epochs import EpochEngine
from .errors import BadParams, OutOfBox, ParseError
from .fixed import ChangeLog, GridKernel, PhiKernel
from .geometry import MAX_DIM, build_direction_net, verify_arrays
from .io import TraceEvent
from .layered import LayerStack
from .pipeline import Pipeline, StabilityStats

ENGINES = ("grid", "phi", "layered", "epoch-weak", "epoch-strong", "pipeline")
SCHEMA = 1


class _PipelineAdapter:
    def __init__(self, d: int, eps: float):
        self.pl = Pipeline(eps, d)

    def insert(self, pid: int, x) -> ChangeLog:
        return self.pl.insert(x, pid)[1]

    def delete(self, pid: int) -> ChangeLog:
        return self.pl.delete(pid)

    def kernel(self) -> set[int]:
        return self.pl.kernel()


def make_engine(name: str, d: int, eps: float):
    if not (2 <= d <= MAX_DIM):
        raise BadParams(f"dimension must be in [2, {MAX_DIM}]")
    if name == "grid":
        return GridKernel(d, eps)
    if name == "phi":
        return PhiKernel(d, eps)
    if name == "layered":
        return LayerStack(d, eps)
    if name == "epoch-weak":
        return EpochEngine(d, eps, "weak")
    if name == "epoch-strong":
        return EpochEngine(d, eps, "strong")
    if name == "pipeline":
        return _PipelineAdapter(d, eps)
    raise BadParams(f"unknown engine {name!r}; choose from {', '.join(ENGINES)}")


def default_radius(d: int) -> float:
    return {2: math.pi / 720, 3: 0.02}.get(d, 0.15)


@dataclass
class RunReport:
    params: dict
    stats: dict
    verification: dict
    final_kernel_size: int
    kernel: list[int]
    timing: dict = field(default_factory=dict)
    schema: int = SCHEMA

    def to_json(self, timings: bool = True) -> str:
        doc = asdict(self)
        if not timings:
            doc.pop("timing")
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        doc = json.loads(text)
        if doc.get("schema") != SCHEMA:
            raise ParseError(f"unsupported report schema {doc.get('schema')!r}")
        return cls(**doc)


def run_trace(
    events: Sequence[TraceEvent],
    engine: str,
    d: int,
    eps: float,
    verify_every: int = 1,
    net_radius: float | None = None,
    exact: bool | None = None,
    seed: int | None = None,
    row_of: Callable[[int], int] = lambda i: i + 1,
) -> RunReport:
    """Replay ``events`` (ids assigned from 0 in insertion order)."""
    eng = make_engine(engine, d, eps)
    if exact is None:
        exact = d == 2 and net_radius is None
    radius = net_radius if net_radius is not None else default_radius(d)
    net = None if exact else build_direction_net(d, radius)
    live: dict[int, np.ndarray] = {}
    next_id = 0
    stats = StabilityStats()
    checks = failures = 0
    worst = -math.inf
    first_failure = None
    ns: list[int] = []
    for i, ev in enumerate(events):
        t0 = time.perf_counter_ns()
        try:
            if ev.op == "+":
                pid = next_id
                next_id += 1
                x = np.array(ev.x, dtype=float)
                if len(x) != d:
                    raise ParseError(f"row {row_of(i)}: expected {d} coordinates")
                log = eng.insert(pid, x)
                live[pid] = x
            else:
                if ev.id not in live:
                    raise ParseError(f"row {row_of(i)}: id {ev.id} is not live")
                log = eng.delete(ev.id)
                del live[ev.id]
        except OutOfBox as e:
            raise ParseError(f"row {row_of(i)}: {e}") from e
        ns.append(time.perf_counter_ns() - t0)
        kern = eng.kernel()
        stats.record(log, len(kern))
        if verify_every and (i + 1) % verify_every == 0 and live:
            P = np.array(list(live.values()))
            K = np.array([live[k] for k in kern]) if kern else np.empty((0, d))
            res = verify_arrays(K, P, eps, net=net, exact=exact)
            checks += 1
            worst = max(worst, res.max_violation)
            if not res.ok:
                failures += 1
                if first_failure is None:
                    first_failure = {
                        "update": i + 1,
                        "max_violation": res.max_violation,
                        "witness": [float(v) for v in res.witness],
                    }
    kern = sorted(eng.kernel())
    arr = np.array(ns) if ns else np.zeros(1)
    return RunReport(
        params={
            "eps": eps,
            "d": d,
            "engine": engine,
            "seed": seed,
            "verify_every": verify_every,
            "mode": "exact" if exact else "net",
            "net_radius": None if exact else radius,
            "certified_eps": eps if exact else eps * (1 + 2 * radius),
        },
        stats=stats.as_dict(),
        verification={
            "checks": checks,
            "failures": failures,
            "max_violation": worst if checks else None,
            "first_failure": first_failure,
        },
        final_kernel_size=len(kern),
        kernel=kern,
        timing={
            "wall_ns_p50": float(np.percentile(arr, 50)),
            "wall_ns_p99": float(np.percentile(arr, 99)),
            "wall_s_total": float(arr.sum() / 1e9),
        },
    )
