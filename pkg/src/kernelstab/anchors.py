"""Anchor selection and the fattening affine transform.

``select_anchors`` picks a_0, then repeatedly the point farthest from the
affine flat spanned by the anchors chosen so far.  The resulting frame maps
a_0 to the origin and the i-th Gram-Schmidt direction, scaled by the
distance of a_i from the previous flat, to e_i.  Every point of the input
lands in [-1, 1]^d.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadParams, DegenerateSpan, EmptySet
from .geometry import DirectionNet, PointSet

SPAN_TOL = 1e-12


@dataclass(frozen=True)
class AnchorFrame:
    ids: tuple[int, ...]
    anchors: np.ndarray  # (d+1, d) coordinates of a_0..a_d
    basis: np.ndarray  # (d, d); row i is q_i / dist_i
    offset: np.ndarray  # -basis @ a_0
    dists: np.ndarray  # distance of a_i from the flat of a_0..a_{i-1}
    directions: np.ndarray  # orthonormal q_1..q_d as rows

    @property
    def dim(self) -> int:
        return self.anchors.shape[1]

    @property
    def box(self) -> tuple[np.ndarray, np.ndarray]:
        d = self.dim
        return -np.ones(d), np.ones(d)

    def apply(self, x) -> np.ndarray:
        """Map points (one per row, or a single vector) into frame coordinates."""
        x = np.asarray(x, dtype=float)
        return x @ self.basis.T + self.offset

    def unapply(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return (y * self.dists) @ self.directions + self.anchors[0]

    def contains(self, x, scale: float = 1.0, tol: float = 1e-9) -> np.ndarray | bool:
        """Whether ``x`` lies in the anchor box scaled by ``scale`` about a_0."""
        y = self.apply(x)
        return np.all(np.abs(y) <= scale + tol, axis=-1)

    def determinant(self) -> float:
        return float(np.linalg.det(self.basis))


def select_anchors_arrays(ids: np.ndarray, X: np.ndarray, seed_id: int | None = None) -> AnchorFrame:
    """Anchor frame of the points ``X`` (rows) whose ids are ``ids``.

    ``ids`` must be sorted ascending; exact distance ties then resolve to
    the smallest id through argmax's first-occurrence rule.
    """
    n, d = X.shape
    if n == 0:
        raise EmptySet("cannot select anchors of an empty set")
    if n < d + 1:
        raise DegenerateSpan(f"{n} points cannot span {d} dimensions")
    if seed_id is None:
        i0 = 0
    else:
        hits = np.flatnonzero(ids == seed_id)
        if len(hits) == 0:
            raise BadParams(f"seed id {seed_id} not in point set")
        i0 = int(hits[0])
    a0 = X[i0]
    D = X - a0
    chosen = [i0]
    Q = np.zeros((0, d))
    dists = []
    scale = None
    for _ in range(d):
        R = D - (D @ Q.T) @ Q
        R = R - (R @ Q.T) @ Q
        dist = np.sqrt(np.einsum("ij,ij->i", R, R))
        j = int(np.argmax(dist))
        best = float(dist[j])
        if scale is None:
            scale = max(1.0, best)
        if best < SPAN_TOL * scale:
            raise DegenerateSpan("point set does not span the ambient dimension")
        r = D[j] - Q.T @ (Q @ D[j])
        r = r - Q.T @ (Q @ r)
        q = r / np.linalg.norm(r)
        Q = np.vstack([Q, q])
        dists.append(float(D[j] @ q))
        chosen.append(j)
    dists_arr = np.array(dists)
    basis = Q / dists_arr[:, None]
    return AnchorFrame(
        ids=tuple(int(ids[i]) for i in chosen),
        anchors=X[chosen].copy(),
        basis=basis,
        offset=-(basis @ a0),
        dists=dists_arr,
        directions=Q,
    )


def select_anchors(P: PointSet, seed_id: int | None = None) -> AnchorFrame:
    """Anchors of ``P``; a_0 is the smallest id unless ``seed_id`` is given."""
    ids, X = P.arrays()
    return select_anchors_arrays(ids, X, seed_id)


def beta_d(d: int) -> float:
    if d < 1:
        raise BadParams("dimension must be positive")
    return 2.0**d * d**1.5 * math.factorial(d)


@dataclass(frozen=True)
class FatnessReport:
    ratio: float
    bound: float


def fatness_ratio(P: PointSet, net: DirectionNet) -> FatnessReport:
    """Max/min directional width of ``P`` over the net directions.

    This under-estimates the true ratio since only net directions are seen.
    """
    if len(P) == 0:
        raise EmptySet("fatness of an empty set")
    X = P.arrays()[1]
    C = X - X.mean(axis=0)
    sv = np.linalg.svd(C, compute_uv=False) if len(X) > 1 else np.zeros(1)
    if len(X) <= P.dim or sv[-1] <= SPAN_TOL * max(1.0, float(sv[0])) or len(sv) < P.dim:
        raise DegenerateSpan("point set does not span the ambient dimension")
    proj = net.dirs @ X.T
    widths = np.ptp(proj, axis=1)
    lo = float(widths.min())
    if lo <= SPAN_TOL * max(1.0, float(widths.max())):
        raise DegenerateSpan("zero width: point set is flat")
    return FatnessReport(float(widths.max()) / lo, beta_d(P.dim))
