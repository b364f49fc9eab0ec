"""Points, directions, directional widths and the epsilon-kernel oracle.

Everything here is a pure function of its inputs.  The oracle
(:func:`verify_kernel`) is what every engine in the package is tested
against, so it is kept deliberately simple: support functions are
evaluated by brute force over convex-hull vertices.
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator, Mapping, NamedTuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import (
    BadEpsilon,
    BadParams,
    DuplicateId,
    EmptySet,
    NotSubset,
    UnknownId,
    UnsupportedDimension,
)

MAX_DIM = 8
TOL = 1e-9


class Point(NamedTuple):
    id: int
    coords: np.ndarray


class PointSet:
    """Id-addressable multiset of d-dimensional points.

    Ids are unique non-negative integers; coordinates may repeat.  Array
    views returned by :meth:`arrays` are sorted by id, which is what makes
    smallest-id tie-breaking cheap for callers.
    """

    def __init__(self, dim: int, points: Mapping[int, Iterable[float]] | None = None):
        if dim < 1:
            raise UnsupportedDimension(f"dimension must be positive, got {dim}")
        self.dim = dim
        self._points: dict[int, np.ndarray] = {}
        self._next_id = 0
        self._cache: tuple[np.ndarray, np.ndarray] | None = None
        if points:
            for pid, coords in points.items():
                self.add(coords, pid)

    @classmethod
    def from_array(cls, coords, ids: Iterable[int] | None = None) -> "PointSet":
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        ps = cls(coords.shape[1])
        if ids is None:
            ids = range(len(coords))
        for pid, x in zip(ids, coords):
            ps.add(x, int(pid))
        return ps

    def add(self, coords, pid: int | None = None) -> int:
        x = np.array(coords, dtype=float).reshape(-1)
        if x.shape[0] != self.dim:
            raise BadParams(f"expected {self.dim} coordinates, got {x.shape[0]}")
        if not np.all(np.isfinite(x)):
            raise BadParams("coordinates must be finite")
        if pid is None:
            pid = self._next_id
        pid = int(pid)
        if pid < 0:
            raise BadParams("point ids must be non-negative")
        if pid in self._points:
            raise DuplicateId(pid)
        self._points[pid] = x
        self._next_id = max(self._next_id, pid + 1)
        self._cache = None
        return pid

    def remove(self, pid: int) -> np.ndarray:
        try:
            x = self._points.pop(pid)
        except KeyError:
            raise UnknownId(pid) from None
        self._cache = None
        return x

    def __len__(self) -> int:
        return len(self._points)

    def __contains__(self, pid) -> bool:
        return pid in self._points

    def __iter__(self) -> Iterator[int]:
        return iter(self._points)

    def __getitem__(self, pid: int) -> np.ndarray:
        try:
            return self._points[pid]
        except KeyError:
            raise UnknownId(pid) from None

    def ids(self) -> list[int]:
        """Ids in insertion order."""
        return list(self._points)

    def points(self) -> Iterator[Point]:
        for pid, x in self._points.items():
            yield Point(pid, x)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(ids, coords)`` sorted by id."""
        if self._cache is None:
            ids = np.array(sorted(self._points), dtype=np.int64)
            if len(ids):
                coords = np.array([self._points[i] for i in ids], dtype=float)
            else:
                coords = np.empty((0, self.dim))
            self._cache = (ids, coords)
        return self._cache

    def subset(self, ids: Iterable[int]) -> "PointSet":
        sub = PointSet(self.dim)
        for pid in ids:
            sub.add(self[pid], pid)
        return sub

    def copy(self) -> "PointSet":
        return self.subset(self._points)

    def __repr__(self) -> str:
        return f"PointSet(dim={self.dim}, n={len(self)})"


def as_direction(u) -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(-1)
    norm = float(np.linalg.norm(u))
    if abs(norm - 1.0) > 1e-9:
        raise BadParams(f"direction must be a unit vector (norm={norm!r})")
    return u


def normalize(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return u / np.linalg.norm(u)


def _check_dim(P: PointSet, u: np.ndarray) -> None:
    if u.shape[0] != P.dim:
        raise BadParams(f"direction has dimension {u.shape[0]}, point set {P.dim}")


def extreme_point(P: PointSet, u) -> int:
    """Id of the point maximizing <p, u>; exact ties go to the smallest id."""
    if len(P) == 0:
        raise EmptySet("extreme point of an empty set")
    u = as_direction(u)
    _check_dim(P, u)
    ids, X = P.arrays()
    # ids are sorted, so argmax's first-occurrence rule is the smallest-id rule
    return int(ids[int(np.argmax(X @ u))])


def directional_width(P: PointSet, u) -> float:
    if len(P) == 0:
        raise EmptySet("width of an empty set")
    u = as_direction(u)
    _check_dim(P, u)
    proj = P.arrays()[1] @ u
    return float(proj.max() - proj.min())


def box_width(u) -> float:
    """Width of the cube [-1, 1]^d along ``u``."""
    return 2.0 * float(np.abs(np.asarray(u)).sum())


# ---------------------------------------------------------------------------
# Direction nets


@dataclass(frozen=True)
class DirectionNet:
    dirs: np.ndarray
    angular_radius: float
    # when the net is centrally symmetric: a subset H with dirs = H u -H
    half: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.dirs)

    @property
    def dim(self) -> int:
        return self.dirs.shape[1]


def _lattice_points(d: int, N: int) -> np.ndarray:
    """Signed points of the N-subdivided cross-polytope boundary."""
    out = []
    for bars in itertools.combinations(range(N + d - 1), d - 1):
        parts = np.diff((-1,) + bars + (N + d - 1,)) - 1
        nz = np.flatnonzero(parts)
        for signs in itertools.product((1.0, -1.0), repeat=len(nz)):
            x = np.zeros(d)
            x[nz] = parts[nz] * np.array(signs)
            out.append(x)
    return np.array(out) / N


@lru_cache(maxsize=32)
def _cached_net(d: int, angular_radius: float) -> DirectionNet:
    if d == 2:
        n = math.ceil(2 * math.pi / angular_radius - 1e-9)
        t = 2 * math.pi * np.arange(n) / n
        dirs = np.column_stack([np.cos(t), np.sin(t)])
        half = dirs[: n // 2] if n % 2 == 0 else None
    else:
        # Rounding barycentric coordinates to the 1/N lattice moves a facet
        # point by at most sqrt(d)/(2N); facet points have norm >= 1/sqrt(d),
        # so the projected angle is at most asin(d / (2N)).
        N = math.ceil(d / (2 * math.sin(angular_radius)))
        pts = _lattice_points(d, N)
        dirs = pts / np.linalg.norm(pts, axis=1, keepdims=True)
        lead = dirs[np.arange(len(dirs)), np.argmax(dirs != 0, axis=1)]
        half = dirs[lead > 0]
    dirs.setflags(write=False)
    if half is not None:
        half.setflags(write=False)
    return DirectionNet(dirs, angular_radius, half)


def build_direction_net(d: int, angular_radius: float) -> DirectionNet:
    """A set of unit vectors such that every unit vector is within
    ``angular_radius`` of some member."""
    if d < 2 or d > MAX_DIM:
        raise UnsupportedDimension(f"direction nets support 2 <= d <= {MAX_DIM}, got {d}")
    if not (0 < angular_radius <= math.pi / 4 + 1e-12):
        raise BadParams("angular_radius must lie in (0, pi/4]")
    return _cached_net(int(d), float(angular_radius))


def default_net(d: int) -> DirectionNet:
    radius = {2: math.pi / 720, 3: 0.02, 4: 0.15}.get(d, math.pi / 4)
    return build_direction_net(d, radius)


# ---------------------------------------------------------------------------
# Hulls


def hull_vertex_indices(X: np.ndarray) -> np.ndarray:
    """Indices of convex-hull vertices of ``X`` (all indices if degenerate)."""
    n, d = X.shape
    if n <= d + 1:
        return np.arange(n)
    try:
        return np.asarray(ConvexHull(X).vertices)
    except (QhullError, ValueError):
        return np.arange(n)


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def hull_polygon_2d(X: np.ndarray) -> np.ndarray:
    """Counter-clockwise hull vertex indices; collinear input gives the two
    endpoints, a single distinct point gives one index."""
    n = len(X)
    if n > 3:
        try:
            return np.asarray(ConvexHull(X).vertices)
        except (QhullError, ValueError):
            pass
    order = sorted(range(n), key=lambda i: (X[i, 0], X[i, 1]))
    uniq: list[int] = []
    for i in order:
        if not uniq or not np.array_equal(X[uniq[-1]], X[i]):
            uniq.append(i)
    if len(uniq) <= 2:
        return np.array(uniq)
    lower: list[int] = []
    for i in uniq:
        while len(lower) >= 2 and _cross(X[lower[-2]], X[lower[-1]], X[i]) <= 0:
            lower.pop()
        lower.append(i)
    upper: list[int] = []
    for i in reversed(uniq):
        while len(upper) >= 2 and _cross(X[upper[-2]], X[upper[-1]], X[i]) <= 0:
            upper.pop()
        upper.append(i)
    return np.array(lower[:-1] + upper[:-1])


# ---------------------------------------------------------------------------
# Verification


@dataclass
class VerifyResult:
    ok: bool
    max_violation: float
    witness: np.ndarray
    mode: str
    width_ratio: float
    certified_eps: float

    def as_dict(self) -> dict:
        return {
            "ok": bool(self.ok),
            "max_violation": float(self.max_violation),
            "witness": [float(x) for x in self.witness],
            "mode": self.mode,
            "width_ratio": float(self.width_ratio),
            "certified_eps": float(self.certified_eps),
        }


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("KERNELSTAB_THREADS", "1")))
    except ValueError:
        return 1


CHUNK = 2048


def _row_keys(X: np.ndarray) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=float)
    return X.view(np.dtype((np.void, X.dtype.itemsize * X.shape[1]))).ravel()


def _net_chunk(P, K, eps, D, both, same):
    """Violations along the rows of D (and along -D when ``both``)."""
    pp = D @ P.T
    pmax = pp.max(axis=1)
    pmin = pp.min(axis=1)
    width = pmax - pmin
    if same:
        v = -eps * width
        return v, (v if both else None), np.ones(len(D))
    kk = D @ K.T
    kmax = kk.max(axis=1)
    kmin = kk.min(axis=1)
    vp = pmax - kmax - eps * width
    vm = kmin - pmin - eps * width if both else None
    return vp, vm, width / (kmax - kmin)


def net_violation(P: np.ndarray, K: np.ndarray, eps: float, net: DirectionNet) -> tuple[float, np.ndarray, float]:
    """Max over the net of <P[u] - K[u], u> - eps*w(P, u).

    Returns ``(max_violation, witness direction, max width ratio)``.  Only
    hull vertices are used, which leaves every support value unchanged;
    when K holds all hull vertices of P the support values coincide and
    only widths are needed.
    """
    P = P[hull_vertex_indices(P)]
    same = bool(np.all(np.isin(_row_keys(P), _row_keys(K))))
    if not same:
        K = K[hull_vertex_indices(K)]
    both = net.half is not None
    D = net.half if both else net.dirs
    chunks = [D[i : i + CHUNK] for i in range(0, len(D), CHUNK)]
    threads = _thread_count()
    with np.errstate(divide="ignore", invalid="ignore"):
        if threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(threads) as pool:
                parts = list(pool.map(lambda c: _net_chunk(P, K, eps, c, both, same), chunks))
        else:
            parts = [_net_chunk(P, K, eps, c, both, same) for c in chunks]
    vp = np.concatenate([p[0] for p in parts])
    ratio = np.concatenate([p[2] for p in parts])
    # 0/0 means both widths vanish, which is a perfect match
    ratio = np.where(np.isnan(ratio), 1.0, ratio)
    i = int(np.argmax(vp))
    best, witness = float(vp[i]), D[i]
    if both:
        vm = np.concatenate([p[1] for p in parts])
        j = int(np.argmax(vm))
        if vm[j] > best:
            best, witness = float(vm[j]), -D[j]
    return best, np.array(witness), float(ratio.max())


def exact_violation_2d(P: np.ndarray, K: np.ndarray, eps: float) -> tuple[float, np.ndarray, float]:
    """Exact max over the whole circle of <P[u] - K[u], u> - eps*w(P, u).

    The three support points P[u], K[u] and P[-u] are constant on arcs
    between hull edge normals, where the objective is <w, u> for a fixed
    vector w; its arc maximum is |w| if w points into the arc, else an
    endpoint value.
    """
    hp = P[hull_polygon_2d(P)]
    hk = K[hull_polygon_2d(K)]

    def normal_angles(H: np.ndarray) -> np.ndarray:
        if len(H) < 2:
            return np.empty(0)
        E = np.roll(H, -1, axis=0) - H
        if len(H) == 2:
            E = E[:1]
            nrm = np.array([[E[0, 1], -E[0, 0]], [-E[0, 1], E[0, 0]]])
        else:
            nrm = np.column_stack([E[:, 1], -E[:, 0]])
        return np.arctan2(nrm[:, 1], nrm[:, 0])

    a_p = normal_angles(hp)
    brk = np.concatenate([a_p, a_p + np.pi, normal_angles(hk)])
    brk = np.unique(np.mod(brk, 2 * np.pi))
    if len(brk) == 0:
        brk = np.array([0.0])
    lo = brk
    hi = np.append(brk[1:], brk[0] + 2 * np.pi)
    mid = 0.5 * (lo + hi)
    U = np.column_stack([np.cos(mid), np.sin(mid)])
    projp = U @ hp.T
    pu = hp[np.argmax(projp, axis=1)]
    pm = hp[np.argmin(projp, axis=1)]
    ku = hk[np.argmax(U @ hk.T, axis=1)]
    W = pu - ku - eps * (pu - pm)

    def val(theta):
        return W[:, 0] * np.cos(theta) + W[:, 1] * np.sin(theta)

    best_t = np.where(val(lo) >= val(hi), lo, hi)
    best_v = np.maximum(val(lo), val(hi))
    wa = np.arctan2(W[:, 1], W[:, 0])
    # shift w's angle into [lo, lo + 2pi)
    wa = lo + np.mod(wa - lo, 2 * np.pi)
    inside = (wa <= hi) & (np.hypot(W[:, 0], W[:, 1]) > 0)
    best_v = np.where(inside, np.hypot(W[:, 0], W[:, 1]), best_v)
    best_t = np.where(inside, wa, best_t)
    i = int(np.argmax(best_v))
    witness = np.array([math.cos(best_t[i]), math.sin(best_t[i])])

    wk = np.ptp(U @ hk.T, axis=1)
    wp = np.ptp(projp, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(wp > 0, wp / wk, 1.0)
    return float(best_v[i]), witness, float(np.max(ratio))


def verify_kernel(
    K: PointSet,
    P: PointSet,
    eps: float,
    net: DirectionNet | None = None,
    exact: bool = False,
) -> VerifyResult:
    """Check <P[u] - K[u], u> <= eps * w(P, u) over a direction net.

    With ``exact=True`` (d = 2 only) the check covers every direction on
    the circle.  ``certified_eps`` is the tolerance the net result implies
    for all directions, eps * (1 + 2 * angular_radius).
    """
    if not (0 < eps < 1):
        raise BadEpsilon(f"eps must lie in (0, 1), got {eps}")
    if len(P) == 0:
        raise EmptySet("cannot verify against an empty point set")
    missing = [pid for pid in K if pid not in P]
    if missing:
        raise NotSubset(f"kernel ids absent from P: {missing[:5]}")
    if K.dim != P.dim:
        raise BadParams("dimension mismatch")
    moved = [pid for pid in K if not np.array_equal(K[pid], P[pid])]
    if moved:
        raise NotSubset(f"kernel points differ from P at ids {moved[:5]}")
    Pc = P.arrays()[1]
    Kc = np.array([P[pid] for pid in K]) if len(K) else np.empty((0, P.dim))
    return verify_arrays(Kc, Pc, eps, net=net, exact=exact)


def verify_arrays(
    K: np.ndarray,
    P: np.ndarray,
    eps: float,
    net: DirectionNet | None = None,
    exact: bool = False,
) -> VerifyResult:
    """Array form of :func:`verify_kernel` (no subset check)."""
    if P.ndim != 2 or len(P) == 0:
        raise EmptySet("cannot verify against an empty point set")
    d = P.shape[1]
    if len(K) == 0:
        return VerifyResult(False, math.inf, np.eye(d)[0], "empty", math.inf, eps)
    if exact:
        if d != 2:
            raise BadParams("exact verification is implemented for d = 2 only")
        v, w, ratio = exact_violation_2d(P, K, eps)
        return VerifyResult(v <= TOL, v, w, "exact", ratio, eps)
    if net is None:
        net = default_net(d)
    v, w, ratio = net_violation(P, K, eps, net)
    return VerifyResult(
        v <= TOL, v, w, "net", ratio,
        eps * (1 + 2 * net.angular_radius),
    )
