"""kernelstab command line: generate, run, verify, experiment."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import BadEpsilon, BadParams, KernelStabError, ParseError, UnsupportedDimension
from .experiments import gen_cyclic_perturbed, gen_sphere, ratio_experiment
from .geometry import PointSet, build_direction_net, hull_polygon_2d, verify_kernel
from .io import (
    TraceEvent,
    gen_points,
    gen_trace,
    is_trace_file,
    read_ids,
    read_points,
    read_trace,
    write_points,
    write_trace,
)
from .runner import ENGINES, default_radius, run_trace

EXIT_OK, EXIT_VERIFY, EXIT_PARSE, EXIT_PARAMS = 0, 2, 3, 4
POINT_KINDS = ("uniform-box", "ball", "sphere", "cyclic-perturbed")
TRACE_KINDS = ("insert-only", "insert-delete-mix", "adversarial-outside")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def cmd_generate(args) -> int:
    if args.kind in POINT_KINDS:
        X = gen_points(args.kind, args.n, args.dim, args.seed, args.eps)
        write_points(args.out, X)
    else:
        events = gen_trace(args.kind, args.n, args.dim, args.seed, args.p_del, args.points)
        write_trace(args.out, events)
    return EXIT_OK


def _load_events(path: str) -> tuple[list[TraceEvent], int | None, int]:
    """Events, dimension (None if unknown) and the file row of event 0."""
    if is_trace_file(path):
        events = read_trace(path)
        d = next((len(e.x) for e in events if e.op == "+"), None)
        return events, d, 1
    X = read_points(path)
    return [TraceEvent("+", x=tuple(map(float, row))) for row in X], X.shape[1], 2


def cmd_run(args) -> int:
    events, d, row0 = _load_events(args.input)
    d = args.dim or d
    if d is None:
        raise BadParams("empty trace: pass --dim")
    report = run_trace(
        events,
        args.engine,
        d,
        args.eps,
        verify_every=args.verify_every,
        net_radius=args.net_radius,
        seed=args.seed,
        row_of=lambda i: i + row0,
    )
    _emit(report.to_json(), args.out)
    if args.svg and d == 2:
        live = {}
        nid = 0
        for ev in events:
            if ev.op == "+":
                live[nid] = ev.x
                nid += 1
            else:
                live.pop(ev.id, None)
        write_svg(args.svg, live, report.kernel)
    return EXIT_VERIFY if report.verification["failures"] else EXIT_OK


def cmd_verify(args) -> int:
    X = read_points(args.points)
    P = PointSet.from_array(X)
    K = P.subset(read_ids(args.kernel)) if args.kernel else P.copy()
    net = None
    if not args.exact:
        radius = args.net_radius if args.net_radius is not None else default_radius(P.dim)
        net = build_direction_net(P.dim, radius)
    res = verify_kernel(K, P, args.eps, net=net, exact=args.exact)
    _emit(json.dumps(res.as_dict(), indent=2), args.out)
    if not res.ok:
        print("witness direction: " + " ".join("%.6f" % v for v in res.witness), file=sys.stderr)
    return EXIT_OK if res.ok else EXIT_VERIFY


def cmd_experiment(args) -> int:
    try:
        spec = json.loads(Path(args.spec).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ParseError(f"cannot read experiment spec: {e}") from e
    gen = spec.get("generator")
    seeds = spec.get("seeds", [0])
    n, d, eps = spec.get("n"), spec.get("d"), spec.get("eps", 0.1)
    reports = []
    for seed in seeds:
        if gen == "sphere":
            inst = gen_sphere(n, d, seed)
            run_eps = eps
        elif gen == "cyclic-perturbed":
            inst = gen_cyclic_perturbed(n, d, eps, seed)
            run_eps = inst.meta["eps_effective"] if spec.get("tuned", True) else eps
        else:
            raise BadParams(f"unknown generator {gen!r}")
        reports.append(ratio_experiment(inst, run_eps, spec.get("net_radius")).as_dict())
    _emit(json.dumps(reports, indent=2, default=float), args.out)
    return EXIT_OK


def write_svg(path, live: dict, kernel: list[int], size: int = 600) -> None:
    ids = sorted(live)
    X = np.array([live[i] for i in ids]) if ids else np.zeros((0, 2))
    lo = X.min(axis=0) if len(X) else np.zeros(2)
    span = float((X.max(axis=0) - lo).max()) if len(X) else 1.0
    span = span or 1.0

    def sc(p):
        q = (np.asarray(p) - lo) / span * (size - 40) + 20
        return q[0], size - q[1]

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">']
    if len(X) >= 3:
        hull = X[hull_polygon_2d(X)]
        pts = " ".join("%.2f,%.2f" % sc(p) for p in hull)
        parts.append(f'<polygon points="{pts}" fill="none" stroke="#888"/>')
    kset = set(kernel)
    for pid, p in zip(ids, X):
        cx, cy = sc(p)
        if pid in kset:
            parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="3" fill="#c00"/>')
        else:
            parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="1.2" fill="#249"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kernelstab", description="Stable eps-kernels of dynamic point sets")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a point file or an update trace")
    g.add_argument("kind", choices=POINT_KINDS + TRACE_KINDS)
    g.add_argument("-n", type=int, required=True, help="points, or events for traces")
    g.add_argument("--dim", type=int, default=2)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--eps", type=float, default=0.2, help="push scale for cyclic-perturbed")
    g.add_argument("--p-del", type=float, default=0.3, help="deletion probability for traces")
    g.add_argument("--points", default="ball", choices=("ball", "uniform-box"), help="distribution of trace insertions")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="replay a trace or point file through an engine")
    r.add_argument("input")
    r.add_argument("--engine", choices=ENGINES, default="pipeline")
    r.add_argument("--eps", type=float, required=True)
    r.add_argument("--dim", type=int, default=None)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--verify-every", type=int, default=1, help="0 disables verification")
    r.add_argument("--net-radius", type=float, default=None, help="net verification (default: exact in d=2)")
    r.add_argument("--svg", default=None, help="final snapshot for d=2")
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="check a kernel against a point file")
    v.add_argument("points")
    v.add_argument("--kernel", default=None, help="file of point ids (row order from 0); default: all")
    v.add_argument("--eps", type=float, required=True)
    v.add_argument("--net-radius", type=float, default=None)
    v.add_argument("--exact", action="store_true", help="exact check (d=2 only)")
    v.add_argument("--out", default=None)
    v.set_defaults(func=cmd_verify)

    e = sub.add_parser("experiment", help="greedy kernel-size ratios from a JSON spec")
    e.add_argument("spec")
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (BadEpsilon, BadParams, UnsupportedDimension) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARAMS
    except (ParseError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except KernelStabError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
