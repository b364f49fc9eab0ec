"""Instance generators for approximation-stability probes and a greedy
estimator of the minimum kernel size."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .anchors import select_anchors_arrays
from .errors import BadParams
from .geometry import DirectionNet, PointSet, build_direction_net

COVER_TOL = 1e-9


@dataclass
class Instance:
    points: PointSet
    meta: dict
    # directions the instance is built around (facet normals); an estimator
    # that samples directions should include them
    directions: np.ndarray | None = None
    facet_point_ids: list[int] = field(default_factory=list)


@dataclass
class RatioReport:
    eps: float
    kappa_eps: int
    kappa_half: int
    ratio: float
    net_radius: float
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Cyclic polytope with one point pushed out of every facet


def facets_bruteforce(V: np.ndarray, tol: float = 1e-9) -> list[tuple[tuple[int, ...], np.ndarray, float]]:
    """Facets of conv(V) for points in general position.

    Every d-subset spans a hyperplane; it is a facet when all other points
    are strictly on one side.  Returns ``(indices, outward unit normal,
    offset)`` with ``<normal, x> <= offset`` on the polytope.
    """
    n, d = V.shape
    out = []
    scale = max(1.0, float(np.abs(V).max()))
    for idx in itertools.combinations(range(n), d):
        S = V[list(idx)]
        A = S[1:] - S[0]
        _, sv, vt = np.linalg.svd(A)
        if sv[-1] < 1e-12 * scale:
            continue
        normal = vt[-1]
        off = float(normal @ S[0])
        side = V @ normal - off
        others = np.delete(side, idx)
        if np.all(others <= tol * scale):
            out.append((idx, normal, off))
        elif np.all(others >= -tol * scale):
            out.append((idx, -normal, -off))
    return out


def gen_cyclic_perturbed(n: int, d: int, eps: float, seed: int = 0, rho: float = 0.75) -> Instance:
    """Fattened cyclic polytope on n moment-curve points plus, for every
    facet, a point pushed outward from the facet centroid.

    The push is rho * eps' times the polytope's width along the facet
    normal, where eps' <= eps is the largest value (binary search) that
    keeps every pushed point strictly inside all other facet halfspaces.
    eps' is recorded as ``meta["eps_effective"]``; at eps'/2 each pushed
    point is needed by every kernel when ``meta["min_margin"] > 0``.
    """
    if d not in (3, 4):
        raise BadParams("cyclic instances support d in {3, 4}")
    if not (d + 1 <= n <= 40):
        raise BadParams("need d + 1 <= n <= 40")
    if not (0 < eps < 1):
        raise BadParams("eps must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    spacing = 2.0 / (n - 1)
    t = np.sort(np.linspace(-1, 1, n) + rng.uniform(-0.25, 0.25, n) * spacing)
    V = np.column_stack([t**k for k in range(1, d + 1)])
    frame = select_anchors_arrays(np.arange(n), V)
    V = frame.apply(V)
    facets = facets_bruteforce(V)
    normals = np.array([f[1] for f in facets])
    offsets = np.array([f[2] for f in facets])
    centroids = np.array([V[list(f[0])].mean(axis=0) for f in facets])
    proj = normals @ V.T
    widths = proj.max(axis=1) - proj.min(axis=1)
    push = rho * eps * widths

    def feasible(s: float) -> bool:
        Pf = centroids + (s * push)[:, None] * normals
        side = Pf @ normals.T - offsets[None, :]
        np.fill_diagonal(side, -1.0)
        return bool(np.all(side < 0))

    s = 1.0
    if not feasible(s):
        lo, hi = 0.0, 1.0
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if feasible(mid) else (lo, mid)
        s = lo
    eps_eff = s * eps
    Pf = centroids + (s * push)[:, None] * normals
    allp = np.vstack([V, Pf])
    P = PointSet.from_array(allp)
    meta = {
        "generator": "cyclic-perturbed",
        "n": n,
        "d": d,
        "eps": eps,
        "seed": seed,
        "rho": rho,
        "facets": len(facets),
        "eps_effective": eps_eff,
        "min_margin": _facet_margin(allp, n, normals, eps_eff / 2),
    }
    return Instance(P, meta, normals, list(range(n, n + len(facets))))


def _facet_margin(X: np.ndarray, n: int, normals: np.ndarray, eps: float) -> float:
    """Smallest amount by which a pushed point is needed along its normal:
    its lead over the rest minus eps times the width.  Positive means every
    pushed point belongs to every eps-kernel."""
    proj = normals @ X.T
    width = proj.max(axis=1) - proj.min(axis=1)
    own = proj[np.arange(len(normals)), n + np.arange(len(normals))]
    rest = proj.copy()
    rest[np.arange(len(normals)), n + np.arange(len(normals))] = -np.inf
    return float(np.min(own - rest.max(axis=1) - eps * width))


# ---------------------------------------------------------------------------
# Evenly spread points on the unit sphere


def _random_rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    Q, R = np.linalg.qr(rng.normal(size=(d, d)))
    return Q * np.sign(np.diag(R))


def gen_sphere(n: int, d: int, seed: int | None = None) -> Instance:
    """n nearly evenly spaced points on the unit sphere in R^d.

    d = 2 uses exact uniform angles, d = 3 a Fibonacci spiral and d >= 4
    farthest-point sampling from random candidates.  ``seed=None`` gives the
    canonical placement (phase 0 in the plane); any seed applies a random
    rotation.
    """
    if d < 2:
        raise BadParams("sphere instances need d >= 2")
    if n < d + 1:
        raise BadParams("need n >= d + 1")
    rng = np.random.default_rng(seed)
    if d == 2:
        phase = 0.0 if seed is None else rng.uniform(0, 2 * math.pi / n)
        a = phase + 2 * math.pi * np.arange(n) / n
        X = np.column_stack([np.cos(a), np.sin(a)])
    elif d == 3:
        k = np.arange(n) + 0.5
        z = 1 - 2 * k / n
        r = np.sqrt(1 - z * z)
        a = math.pi * (3 - math.sqrt(5)) * k
        X = np.column_stack([r * np.cos(a), r * np.sin(a), z])
        if seed is not None:
            X = X @ _random_rotation(3, rng).T
    else:
        C = rng.normal(size=(20 * n, d))
        C /= np.linalg.norm(C, axis=1, keepdims=True)
        chosen = [0]
        best = np.full(len(C), np.inf)
        for _ in range(n - 1):
            best = np.minimum(best, np.linalg.norm(C - C[chosen[-1]], axis=1))
            chosen.append(int(np.argmax(best)))
        X = C[chosen]
    X[np.abs(X) < 1e-15] = 0.0
    meta = {"generator": "sphere", "n": n, "d": d, "seed": seed, "gap_ratio": gap_ratio(X)}
    return Instance(PointSet.from_array(X), meta)


def gap_ratio(X: np.ndarray) -> float:
    """Largest over smallest nearest-neighbour angle on the sphere."""
    U = X / np.linalg.norm(X, axis=1, keepdims=True)
    G = np.clip(U @ U.T, -1.0, 1.0)
    np.fill_diagonal(G, -1.0)
    nn = np.arccos(G.max(axis=1))
    return float(nn.max() / nn.min())


# ---------------------------------------------------------------------------
# Greedy kernel estimation


def cover_matrix(X: np.ndarray, eps: float, dirs: np.ndarray) -> np.ndarray:
    """cover[u, i]: point i alone satisfies the kernel inequality along u."""
    proj = dirs @ X.T
    hp = proj.max(axis=1, keepdims=True)
    width = hp - proj.min(axis=1, keepdims=True)
    return hp - proj - eps * width <= COVER_TOL


def greedy_kernel(P: PointSet, eps: float, net: DirectionNet) -> set[int]:
    """Greedy set cover of the net directions; ties go to the smaller id."""
    ids, X = P.arrays()
    if len(ids) == 0:
        return set()
    cover = cover_matrix(X, eps, net.dirs)
    uncovered = np.ones(len(net.dirs), dtype=bool)
    chosen: list[int] = []
    while uncovered.any():
        gain = cover[uncovered].sum(axis=0)
        i = int(np.argmax(gain))
        chosen.append(i)
        uncovered &= ~cover[:, i]
    return {int(ids[i]) for i in chosen}


def exhaustive_min_kernel(P: PointSet, eps: float, net: DirectionNet) -> int:
    """Size of the smallest subset covering the net (brute force, n <= 16)."""
    ids, X = P.arrays()
    if len(ids) > 16:
        raise BadParams("exhaustive search is limited to 16 points")
    if len(ids) == 0:
        return 0
    cover = cover_matrix(X, eps, net.dirs)
    masks = [int("".join("1" if c else "0" for c in col), 2) for col in cover.T]
    full = (1 << len(net.dirs)) - 1
    for size in range(1, len(ids) + 1):
        for combo in itertools.combinations(masks, size):
            acc = 0
            for m in combo:
                acc |= m
            if acc == full:
                return size
    return len(ids)


def default_net_radius(d: int) -> float:
    return {2: math.pi / 720, 3: 0.02}.get(d, 0.15)


def ratio_experiment(inst: Instance, eps: float, net_radius: float | None = None) -> RatioReport:
    P = inst.points
    if net_radius is None:
        net_radius = default_net_radius(P.dim)
    net = build_direction_net(P.dim, net_radius)
    if inst.directions is not None and len(inst.directions):
        net = DirectionNet(np.vstack([net.dirs, inst.directions]), net.angular_radius)
    k1 = greedy_kernel(P, eps, net)
    k2 = greedy_kernel(P, eps / 2, net)
    meta = dict(inst.meta)
    if inst.facet_point_ids:
        meta["facet_points_in_half_kernel"] = int(sum(pid in k2 for pid in inst.facet_point_ids))
    return RatioReport(eps, len(k1), len(k2), len(k2) / len(k1), net_radius, meta)
