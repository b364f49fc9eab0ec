"""Acceptance suite.  Each criterion prints one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` or directly as a script.
"""

import math
import sys
import time

import numpy as np
import pytest

from kernelstab import GridKernel, PhiKernel, PointSet, beta_d, build_direction_net, select_anchors, snapped_nn
from kernelstab.experiments import (
    exhaustive_min_kernel,
    gen_cyclic_perturbed,
    gen_sphere,
    greedy_kernel,
    ratio_experiment,
)
from kernelstab.geometry import DirectionNet, verify_arrays
from kernelstab.io import ball_points, gen_trace
from kernelstab.pipeline import Pipeline
from kernelstab.runner import run_trace

SEEDS = (0, 1, 2)
pytestmark = pytest.mark.slow


def _fuzz_engine(engine, d, steps, seed, p_del=0.4, check=None):
    """Mixed updates with some exact duplicates and box-boundary points.
    Returns the largest ChangeLog and the number of failed checks."""
    r = np.random.default_rng(seed)
    live: dict[int, np.ndarray] = {}
    nid = 0
    worst = fails = 0
    for _ in range(steps):
        if live and r.random() < p_del:
            pid = int(r.choice(list(live)))
            del live[pid]
            log = engine.delete(pid)
        else:
            u = r.random()
            if live and u < 0.05:
                x = live[int(r.choice(list(live)))].copy()
            elif u < 0.1:
                x = r.uniform(-1, 1, d)
                x[r.integers(d)] = r.choice([-1.0, 1.0])
            else:
                x = r.uniform(-1, 1, d)
            live[nid] = x
            log = engine.insert(nid, x)
            nid += 1
        worst = max(worst, len(log))
        if check is not None and not check(engine, live):
            fails += 1
    return worst, fails


# ---------------------------------------------------------------------------


def criterion_1():
    t0 = time.perf_counter()
    failures = checks = 0
    worst = -math.inf
    for d in (2, 3):
        for eps in (0.1, 0.2, 0.4):
            for seed in SEEDS:
                events = gen_trace("insert-delete-mix", 2000, d, seed=seed, p_del=0.3)
                rep = run_trace(events, "pipeline", d, eps, net_radius=None if d == 2 else 0.02)
                failures += rep.verification["failures"]
                checks += rep.verification["checks"]
                worst = max(worst, rep.verification["max_violation"])
    elapsed = time.perf_counter() - t0
    ok = failures == 0 and elapsed < 300
    return ok, f"{failures} violations in {checks} checks, worst {worst:.3g}, {elapsed:.0f}s (limit 300s)"


def _max_changes(engine, n, seeds=SEEDS):
    out = []
    for seed in seeds:
        events = gen_trace("insert-delete-mix", n, 2, seed=seed, p_del=0.3)
        rep = run_trace(events, engine, 2, 0.2, verify_every=0)
        out.append((rep.stats["max_changes_per_update"], rep.stats["total_changes"] / rep.stats["updates"]))
    return out


def criterion_2():
    small = _max_changes("pipeline", 1000)
    large = _max_changes("pipeline", 10_000)
    a = max(m for m, _ in small)
    b = max(m for m, _ in large)
    ok = a == b and b <= 32
    per = f"per seed n=1e3 {[m for m, _ in small]}, n=1e4 {[m for m, _ in large]}"
    return ok, f"max changes/update n=1e3: {a}, n=1e4: {b} (bound 32); {per}"


def criterion_3():
    X = ball_points(np.random.default_rng(0), 10_000, 2)
    rows = []
    for eps in (0.4, 0.2, 0.1, 0.05):
        pl = Pipeline(eps, 2)
        for x in X:
            pl.insert(x)
        K = np.array([pl.coords(i) for i in pl.kernel()])
        valid = verify_arrays(K, X, eps, exact=True).ok
        rows.append((eps, len(K), valid))
    scaled = [k * math.sqrt(e) for e, k, _ in rows]
    spread = max(scaled) / min(scaled)
    slope = np.polyfit(np.log([1 / e for e, _, _ in rows]), np.log([k for _, k, _ in rows]), 1)[0]
    ok = spread <= 2 and 0.3 <= slope <= 0.7 and all(v for *_, v in rows)
    sizes = ", ".join(f"eps={e}: {k}" for e, k, _ in rows)
    return ok, f"|K| {sizes}; |K|*sqrt(eps) spread {spread:.2f} (<=2), exponent {slope:.3f} in [0.3, 0.7]"


def criterion_4():
    parts = []
    ok = True
    for d, eps in ((2, 0.1), (3, 0.2)):
        g, _ = _fuzz_engine(GridKernel(d, eps), d, 10_000, seed=10 + d)
        p, _ = _fuzz_engine(PhiKernel(d, eps), d, 10_000, seed=20 + d)
        ok &= g <= 2 * d and p <= 4 * d
        parts.append(f"d={d}: grid max {g} (<= {2 * d}), phi max {p} (<= {4 * d})")
    return ok, "; ".join(parts)


def criterion_5():
    tallies = []

    def check(eng, live):
        inv = eng.check_invariants()
        for k, v in inv.items():
            if not v:
                bad[k] = bad.get(k, 0) + 1
        return all(inv.values())

    ok = True
    for d, eps in ((2, 0.1), (3, 0.2)):
        bad: dict[str, int] = {}
        _, fails = _fuzz_engine(PhiKernel(d, eps), d, 1000, seed=30 + d, check=check)
        ok &= fails == 0
        tallies.append(f"d={d}: {fails} failing updates {bad or ''}".strip())
    return ok, "P1/P2/P3 after each of 1000 updates; " + "; ".join(tallies)


def criterion_6():
    small = _max_changes("layered", 1000)
    large = _max_changes("layered", 10_000)
    a = max(m for m, _ in small)
    b = max(m for m, _ in large)
    mean = max(avg for _, avg in large)
    bound = 4 + 2 * 2
    ok = mean <= 16 and a == b and b <= bound
    return ok, f"mean changes/update {mean:.2f} (<=16); max n=1e3: {a}, n=1e4: {b} (bound {bound})"


def _random_cloud(r, d):
    n = int(r.integers(d + 1, 200))
    kind = r.integers(3)
    if kind == 0:
        X = r.normal(size=(n, d)) @ r.normal(size=(d, d))
    elif kind == 1:
        X = r.uniform(-1, 1, (n, d)) * r.uniform(0.01, 10, d)
    else:
        c = r.normal(size=(3, d)) * 5
        X = c[r.integers(3, size=n)] + r.normal(scale=0.1, size=(n, d))
    return X + r.normal(size=d) * 3


def criterion_7():
    worst = math.inf
    nets = {2: build_direction_net(2, math.pi / 720), 3: build_direction_net(3, 0.02), 4: build_direction_net(4, 0.15)}
    r = np.random.default_rng(7)
    for d, net in nets.items():
        U = net.dirs
        wb = 2 * np.abs(U).sum(axis=1)
        for _ in range(100):
            X = _random_cloud(r, d)
            fr = select_anchors(PointSet.from_array(X))
            wa = np.ptp(U @ fr.apply(fr.anchors).T, axis=1)
            wp = np.ptp(U @ fr.apply(X).T, axis=1)
            slack = min((wp - wa).min(), (wb - wp).min(), (beta_d(d) * wa - wb).min())
            worst = min(worst, slack)
    return worst >= -1e-9, f"300 point sets, min slack {worst:.3g} (>= -1e-9)"


def criterion_8():
    ratios = []
    for seed in range(10):
        rep = ratio_experiment(gen_sphere(500, 2, seed=seed), 0.05)
        ratios.append(rep.ratio)
    missing = 0
    total = 0
    for n in (8, 10, 12):
        for seed in SEEDS:
            inst = gen_cyclic_perturbed(n, 3, 0.2, seed=seed)
            eps = inst.meta["eps_effective"]
            half = greedy_kernel(inst.points, eps / 2, _net_with(inst))
            missing += sum(pid not in half for pid in inst.facet_point_ids)
            total += len(inst.facet_point_ids)
    trend = []
    for n in (8, 10, 12):
        inst = gen_cyclic_perturbed(n, 4, 0.2, seed=0)
        rep = ratio_experiment(inst, inst.meta["eps_effective"])
        trend.append(f"n={n}: {rep.kappa_eps}->{rep.kappa_half}")
    ok = max(ratios) <= 8 and missing == 0
    return ok, (
        f"sphere d=2 max ratio {max(ratios):.2f} (<=8); cyclic d=3 facet points missing "
        f"{missing}/{total}; d=4 trend (not asserted) {', '.join(trend)}"
    )


def _net_with(inst):
    net = build_direction_net(3, 0.02)
    return DirectionNet(np.vstack([net.dirs, inst.directions]), net.angular_radius)


def _nn_loop(ids, X, B):
    out = []
    for b in B:
        best_d, best_id = math.inf, None
        for pid, x in zip(ids, X):
            dd = 0.0
            for xi, bi in zip(x, b):
                dd += (xi - bi) * (xi - bi)
            if dd < best_d or (dd == best_d and pid < best_id):
                best_d, best_id = dd, pid
        out.append(best_id)
    return out


def criterion_9():
    r = np.random.default_rng(9)
    nn_bad = 0
    for _ in range(500):
        d = int(r.integers(2, 5))
        step = float(r.choice([0.05, 0.25, 0.5]))
        n, m = int(r.integers(1, 40)), int(r.integers(1, 30))
        X = np.floor(r.uniform(-1, 1, (n, d)) / step) * step
        B = np.round(r.uniform(-2, 2, (m, d)) / step) * step
        ids = r.choice(10_000, size=n, replace=False)
        got, _ = snapped_nn(ids, X, B)
        nn_bad += got.tolist() != _nn_loop(ids.tolist(), X.tolist(), B.tolist())
    gk_bad = 0
    for _ in range(200):
        d = int(r.integers(2, 4))
        n = int(r.integers(2, 13))
        P = PointSet.from_array(r.normal(size=(n, d)))
        net = build_direction_net(d, 0.05 if d == 2 else 0.3)
        eps = float(r.uniform(0.02, 0.4))
        gk_bad += len(greedy_kernel(P, eps, net)) < exhaustive_min_kernel(P, eps, net)
    return nn_bad == 0 and gk_bad == 0, f"snapped_nn mismatches {nn_bad}/500; greedy below exhaustive {gk_bad}/200"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8, criterion_9]


def _line(k, ok, detail):
    return f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}"


@pytest.mark.parametrize("k", range(1, 10))
def test_criterion(k, capsys):
    ok, detail = CRITERIA[k - 1]()
    with capsys.disabled():
        print("\n" + _line(k, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    results = []
    for k, fn in enumerate(CRITERIA, 1):
        ok, detail = fn()
        print(_line(k, ok, detail), flush=True)
        results.append(ok)
    sys.exit(0 if all(results) else 1)
