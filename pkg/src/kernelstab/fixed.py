"""Stable kernels of point sets living in the box [-1, 1]^d.

Two engines share the same update interface:

``GridKernel``
    For each of the 2d facets of the box and each grid column orthogonal to
    it, keep one point from the nonempty cell of that column nearest the
    facet.  An update changes at most one chosen point per facet side.

``PhiKernel``
    Feeds on a grid kernel at eps/2.  For each facet f the chosen points
    L_f are matched greedily to a coarse grid B_f laid on the facets of
    [-2, 2]^d (spacing sqrt(eps)/c); the matched points form the kernel,
    which is much smaller than L_f.  The greedy matching is repaired after
    every update by a single forward walk over the order of B_f.

Both expose ``insert``, ``delete`` and ``update`` returning a
:class:`ChangeLog`, plus ``kernel()``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import BadEpsilon, DuplicateId, OutOfBox, UnknownId

try:
    from numba import njit
except ImportError:  # pragma: no cover - pure-Python fallback
    def njit(*args, **kwargs):
        return lambda f: f

BOX_TOL = 1e-9


@dataclass
class ChangeLog:
    added: list[int] = field(default_factory=list)
    removed: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.added) + len(self.removed)

    def __bool__(self) -> bool:
        return bool(self.added or self.removed)

    @classmethod
    def diff(cls, before: set, after: set) -> "ChangeLog":
        return cls(sorted(after - before), sorted(before - after))


def check_eps(eps: float) -> float:
    eps = float(eps)
    if not (0 < eps < 1):
        raise BadEpsilon(f"eps must lie in (0, 1), got {eps}")
    return eps


class MultiplicityKernel:
    """Kernel = union of per-part selections, tracked with counts."""

    def __init__(self) -> None:
        self._count: dict[int, int] = {}
        self._touched: dict[int, bool] = {}

    def _bump(self, pid: int, delta: int) -> None:
        c = self._count.get(pid, 0)
        if pid not in self._touched:
            self._touched[pid] = c > 0
        c += delta
        if c:
            self._count[pid] = c
        else:
            del self._count[pid]

    def _flush(self) -> ChangeLog:
        log = ChangeLog()
        for pid, was in self._touched.items():
            now = pid in self._count
            if now and not was:
                log.added.append(pid)
            elif was and not now:
                log.removed.append(pid)
        self._touched = {}
        log.added.sort()
        log.removed.sort()
        return log

    def kernel(self) -> set[int]:
        return set(self._count)

    def kernel_size(self) -> int:
        return len(self._count)

    def __contains__(self, pid) -> bool:
        return pid in self._count


def _as_box_point(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != d:
        raise OutOfBox(f"expected {d} coordinates, got {x.shape[0]}")
    if not np.all(np.abs(x) <= 1 + BOX_TOL):
        raise OutOfBox(f"point {x.tolist()} lies outside [-1, 1]^{d}")
    return x


class GridKernel(MultiplicityKernel):
    """(2d)-stable eps-kernel of points in [-1, 1]^d."""

    def __init__(self, dim: int, eps: float):
        super().__init__()
        self.dim = dim
        self.eps = check_eps(eps)
        self.delta = self.eps / math.sqrt(dim)
        self.ncell = math.ceil(2.0 / self.delta - 1e-12)
        self.side = 2.0 / self.ncell
        self._radix = [self.ncell**k for k in range(dim)]
        self._x: dict[int, np.ndarray] = {}
        self._cell_of: dict[int, int] = {}
        self._cells: dict[int, set[int]] = {}
        self._levels: list[dict[int, set[int]]] = [{} for _ in range(dim)]
        # facet f = 2k (low side of axis k) or 2k + 1 (high side)
        self._choice: list[dict[int, int]] = [{} for _ in range(2 * dim)]
        self._deltas: list[tuple[int, int | None, int | None]] = []

    # -- geometry of the grid

    def cell_index(self, x: np.ndarray) -> np.ndarray:
        c = np.floor((np.asarray(x) + 1.0) / self.side).astype(np.int64)
        return np.clip(c, 0, self.ncell - 1)

    def _code(self, c) -> int:
        return int(sum(int(c[k]) * self._radix[k] for k in range(self.dim)))

    def _digits(self, code: int) -> list[int]:
        return [(code // self._radix[k]) % self.ncell for k in range(self.dim)]

    def _level(self, code: int, k: int) -> int:
        return (code // self._radix[k]) % self.ncell

    def snapped(self, pid: int) -> np.ndarray:
        """Vertex of the point's cell closest to the origin."""
        c = np.array(self._digits(self._cell_of[pid]), dtype=float)
        lo = -1.0 + c * self.side
        hi = -1.0 + (c + 1) * self.side
        return np.where(np.abs(hi) < np.abs(lo), hi, lo)

    def size_bound(self) -> float:
        return 2 * self.dim * (2 / self.delta + 1) ** (self.dim - 1)

    # -- queries

    def __len__(self) -> int:
        return len(self._x)

    def coords(self, pid: int) -> np.ndarray:
        return self._x[pid]

    def ids(self) -> list[int]:
        return list(self._x)

    def facet_members(self, f: int) -> set[int]:
        """L_f: the points chosen by facet ``f``."""
        return set(self._choice[f].values())

    def choice(self, f: int, col: int) -> int | None:
        return self._choice[f].get(col)

    def columns(self, f: int) -> dict[int, int]:
        return dict(self._choice[f])

    def pop_facet_deltas(self) -> list[tuple[int, int | None, int | None]]:
        """Per-facet ``(f, added, removed)`` records since the last call."""
        out, self._deltas = self._deltas, []
        return out

    # -- internal mutation

    def _set_choice(self, f: int, col: int, pid: int | None) -> None:
        old = self._choice[f].get(col)
        if old == pid:
            return
        if pid is None:
            del self._choice[f][col]
        else:
            self._choice[f][col] = pid
            self._bump(pid, 1)
        if old is not None:
            self._bump(old, -1)
        self._deltas.append((f, pid, old))

    def _place(self, pid: int, x: np.ndarray) -> int:
        if pid in self._x:
            raise DuplicateId(pid)
        code = self._code(self.cell_index(x))
        self._x[pid] = x
        self._cell_of[pid] = code
        cell = self._cells.get(code)
        if cell is None:
            self._cells[code] = {pid}
            for k in range(self.dim):
                col = code - self._level(code, k) * self._radix[k]
                self._levels[k].setdefault(col, set()).add(self._level(code, k))
        else:
            cell.add(pid)
        return code

    # -- public API

    def build(self, ids: Sequence[int], X: np.ndarray, hint: Iterable[int] = ()) -> ChangeLog:
        """Insert all points at once.  Within the deciding cell a point from
        ``hint`` is preferred, then the smallest id."""
        hint = set(hint)
        X = np.asarray(X, dtype=float).reshape(len(ids), self.dim)
        if len(ids) and not np.all(np.abs(X) <= 1 + BOX_TOL):
            raise OutOfBox("build input lies outside the box")
        for pid, x in zip(ids, X):
            self._place(int(pid), x)
        for k in range(self.dim):
            for col, levels in self._levels[k].items():
                for f, lev in ((2 * k, min(levels)), (2 * k + 1, max(levels))):
                    if col in self._choice[f]:
                        continue
                    cell = self._cells[col + lev * self._radix[k]]
                    pref = cell & hint
                    self._set_choice(f, col, min(pref) if pref else min(cell))
        return self._flush()

    def insert(self, pid: int, x) -> ChangeLog:
        x = _as_box_point(x, self.dim)
        code = self._place(pid, x)
        for k in range(self.dim):
            lev = self._level(code, k)
            col = code - lev * self._radix[k]
            lo = self._choice[2 * k].get(col)
            if lo is None or lev < self._level(self._cell_of[lo], k):
                self._set_choice(2 * k, col, pid)
            hi = self._choice[2 * k + 1].get(col)
            if hi is None or lev > self._level(self._cell_of[hi], k):
                self._set_choice(2 * k + 1, col, pid)
        return self._flush()

    def delete(self, pid: int) -> ChangeLog:
        if pid not in self._x:
            raise UnknownId(pid)
        code = self._cell_of.pop(pid)
        del self._x[pid]
        cell = self._cells[code]
        cell.discard(pid)
        if not cell:
            del self._cells[code]
        for k in range(self.dim):
            lev = self._level(code, k)
            col = code - lev * self._radix[k]
            levels = self._levels[k][col]
            if not cell:
                levels.discard(lev)
                if not levels:
                    del self._levels[k][col]
            for f, pick in ((2 * k, min), (2 * k + 1, max)):
                if self._choice[f].get(col) != pid:
                    continue
                if cell:
                    self._set_choice(f, col, min(cell))
                elif levels:
                    nxt = self._cells[col + pick(levels) * self._radix[k]]
                    self._set_choice(f, col, min(nxt))
                else:
                    self._set_choice(f, col, None)
        return self._flush()

    def update(self, removals: Iterable[int] = (), additions: Iterable[tuple[int, np.ndarray]] = ()) -> ChangeLog:
        before = self.kernel()
        for pid in removals:
            self.delete(pid)
        for pid, x in additions:
            self.insert(pid, x)
        return ChangeLog.diff(before, self.kernel())

    def check_columns(self) -> bool:
        """Every chosen point sits in its column's extreme nonempty cell."""
        for k in range(self.dim):
            for col, levels in self._levels[k].items():
                for f, lev in ((2 * k, min(levels)), (2 * k + 1, max(levels))):
                    pid = self._choice[f].get(col)
                    if pid is None or self._cell_of[pid] != col + lev * self._radix[k]:
                        return False
            if set(self._choice[2 * k]) != set(self._levels[k]):
                return False
        return True


# ---------------------------------------------------------------------------
# Snapped nearest neighbours


def sqdist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Squared distances between rows of A and rows of B.

    Accumulated coordinate by coordinate so that a given pair always gets
    bit-identical results regardless of the batch it is computed in.
    """
    A = np.atleast_2d(A)
    out = np.zeros((A.shape[0], B.shape[0]))
    for j in range(B.shape[1]):
        diff = A[:, j, None] - B[None, :, j]
        out += diff * diff
    return out


def snapped_nn(ids: Sequence[int], Xhat: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """For each row b of ``B`` the id in ``ids`` whose snapped point is nearest.

    Returns ``(ids, squared distances)``, both of length ``len(B)``; ties go to
    the smaller id.  Empty input gives id -1 and distance inf everywhere.
    """
    nb = len(B)
    if len(ids) == 0:
        return np.full(nb, -1, dtype=np.int64), np.full(nb, np.inf)
    ids = np.asarray(ids, dtype=np.int64)
    order = np.argsort(ids, kind="stable")
    D = sqdist(np.asarray(Xhat)[order], B)
    j = np.argmin(D, axis=0)
    cols = np.arange(nb)
    return ids[order][j], D[j, cols]


def facet_grid(dim: int, k: int, side: int, gamma: float) -> np.ndarray:
    """Grid points of spacing ``gamma`` on facet (k, side) of [-2, 2]^d, in
    lexicographic order of the in-facet coordinates."""
    M = math.ceil(2.0 / gamma - 1e-12)
    ticks = gamma * np.arange(-M, M + 1)
    mesh = np.meshgrid(*([ticks] * (dim - 1)), indexing="ij")
    inner = np.column_stack([m.reshape(-1) for m in mesh]) if dim > 1 else np.zeros((1, 0))
    val = 2.0 if side else -2.0
    return np.insert(inner, k, val, axis=1)


@njit(cache=True)
def _walk(Bo, pphi, pphid, pxh, pid, xh):
    """Forward walk of a new point through the order (position space).

    A walker starting at ``pid`` displaces the assignee at every position
    where it is strictly closer (ties: smaller id) and continues with the
    displaced point.  Returns the id left over at the end, or -1 when the
    walker settled in an unassigned slot.
    """
    nb, d = Bo.shape
    xi = pid
    cur = xh.copy()
    for t in range(nb):
        dist = 0.0
        for j in range(d):
            diff = cur[j] - Bo[t, j]
            dist += diff * diff
        if dist < pphid[t] or (dist == pphid[t] and xi < pphi[t]):
            old = pphi[t]
            pphi[t] = xi
            pphid[t] = dist
            if old < 0:
                pxh[t, :] = cur
                return -1
            tmp = pxh[t, :].copy()
            pxh[t, :] = cur
            cur = tmp
            xi = old
    return xi


class PhiFacet:
    """Greedy matching phi: B_f -> L_f for one facet (all coordinates snapped).

    Assignment arrays are kept in position space: entry t describes the
    t-th grid point of the current order.
    """

    def __init__(self, B: np.ndarray, k: int, gamma: float):
        self.B = B
        self.nb = len(B)
        self.k = k
        self.gamma = gamma
        self.order = np.arange(self.nb)  # b index at each position
        self.pos = np.arange(self.nb)  # position of each b index
        self.Bo = B.copy()
        self.pphi = np.full(self.nb, -1, dtype=np.int64)
        self.pphid = np.full(self.nb, np.inf)
        self.pxh = np.zeros_like(B)
        self.slot_of_b: dict[int, int] = {}  # assigned pid -> b index
        self.xhat: dict[int, np.ndarray] = {}  # every member of L_f
        self.X: set[int] = set()
        self._box_of: dict[int, tuple] = {}
        self._boxes: dict[tuple, set[int]] = {}
        self._row: dict[tuple, int] = {}
        cap = 16
        self._rd = np.full((cap, self.nb), np.inf)
        self._ri = np.full((cap, self.nb), -1, dtype=np.int64)
        self._free = list(range(cap - 1, -1, -1))

    @property
    def phi(self) -> np.ndarray:
        """phi indexed by b (not by position); -1 where undefined."""
        out = np.empty(self.nb, dtype=np.int64)
        out[self.order] = self.pphi
        return out

    # -- reservoir boxes and their cached nearest-neighbour rows

    def _box(self, xh: np.ndarray) -> tuple:
        return tuple(int(v) for v in np.floor(np.delete(xh, self.k) / self.gamma))

    def _refresh(self, box: tuple) -> None:
        members = self._boxes.get(box)
        r = self._row.get(box)
        if not members:
            if r is not None:
                self._rd[r] = np.inf
                self._ri[r] = -1
                self._free.append(r)
                del self._row[box]
            self._boxes.pop(box, None)
            return
        if r is None:
            if not self._free:
                cap = len(self._rd)
                self._rd = np.vstack([self._rd, np.full((cap, self.nb), np.inf)])
                self._ri = np.vstack([self._ri, np.full((cap, self.nb), -1, dtype=np.int64)])
                self._free = list(range(2 * cap - 1, cap - 1, -1))
            r = self._free.pop()
            self._row[box] = r
        mids = sorted(members)
        ids, dist = snapped_nn(mids, np.array([self.xhat[m] for m in mids]), self.B)
        self._ri[r] = ids
        self._rd[r] = dist

    def _x_add(self, pid: int) -> None:
        self.X.add(pid)
        box = self._box(self.xhat[pid])
        self._box_of[pid] = box
        self._boxes.setdefault(box, set()).add(pid)
        self._refresh(box)

    def _x_remove(self, pid: int) -> None:
        self.X.discard(pid)
        box = self._box_of.pop(pid)
        self._boxes[box].discard(pid)
        self._refresh(box)

    def psi(self, b: int) -> tuple[int, float]:
        """Nearest reservoir point to grid point ``b`` (-1 if X is empty)."""
        if not self.X:
            return -1, math.inf
        col_d = self._rd[:, b]
        m = col_d.min()
        cand = self._ri[col_d == m, b]
        return int(cand[cand >= 0].min()), float(m)

    # -- construction and updates

    def _assign(self, t: int, pid: int, dist: float) -> None:
        old = int(self.pphi[t])
        if old >= 0:
            del self.slot_of_b[old]
        self.pphi[t] = pid
        self.pphid[t] = dist
        if pid >= 0:
            self.slot_of_b[pid] = int(self.order[t])
            self.pxh[t] = self.xhat[pid]

    def build(self, members: dict[int, np.ndarray]) -> None:
        self.xhat.update(members)
        for pid in sorted(members):
            self.X.add(pid)
            box = self._box(self.xhat[pid])
            self._box_of[pid] = box
            self._boxes.setdefault(box, set()).add(pid)
        for box in list(self._boxes):
            self._refresh(box)
        for t in range(self.nb):
            if not self.X:
                break
            pid, dist = self.psi(int(self.order[t]))
            self._assign(t, pid, dist)
            self._x_remove(pid)

    def insert(self, pid: int, xh: np.ndarray) -> tuple[int | None, int | None]:
        """Add ``pid`` to L_f.  Returns ``(added, removed)`` for K_f."""
        xh = np.asarray(xh, dtype=float)
        self.xhat[pid] = xh
        before = self.pphi.copy()
        left = int(_walk(self.Bo, self.pphi, self.pphid, self.pxh, pid, xh))
        moved = np.flatnonzero(self.pphi != before)
        for t in moved:
            self.slot_of_b[int(self.pphi[t])] = int(self.order[t])
        if left >= 0:
            self.slot_of_b.pop(left, None)
            self._x_add(left)
        if left == pid:
            return None, None
        return pid, (left if left >= 0 else None)

    def delete(self, pid: int) -> tuple[int | None, int | None]:
        """Remove ``pid`` from L_f.  Returns ``(added, removed)`` for K_f."""
        if pid in self.X:
            self._x_remove(pid)
            del self.xhat[pid]
            return None, None
        b = self.slot_of_b[pid]
        t = int(self.pos[b])
        self._assign(t, -1, math.inf)
        del self.xhat[pid]
        new, dist = self.psi(b)
        # move b to the end of the order
        perm = np.concatenate([np.arange(t), np.arange(t + 1, self.nb), [t]])
        self.order = self.order[perm]
        self.Bo = self.Bo[perm]
        self.pphi = self.pphi[perm]
        self.pphid = self.pphid[perm]
        self.pxh = self.pxh[perm]
        self.pos[self.order] = np.arange(self.nb)
        if new >= 0:
            self._assign(self.nb - 1, new, dist)
            self._x_remove(new)
            return new, pid
        return None, pid

    def members(self) -> set[int]:
        return set(self.xhat)

    def assigned(self) -> set[int]:
        return set(self.slot_of_b)


class PhiKernel(MultiplicityKernel):
    """Stable eps-kernel of size O(1/eps^((d-1)/2)) for points in [-1, 1]^d."""

    def __init__(self, dim: int, eps: float, c: float = 2.0):
        super().__init__()
        self.dim = dim
        self.eps = check_eps(eps)
        self.c = c
        self.gamma = math.sqrt(self.eps) / c
        self.inner = GridKernel(dim, self.eps / 2)
        self.facets = [
            PhiFacet(facet_grid(dim, f // 2, f % 2, self.gamma), f // 2, self.gamma)
            for f in range(2 * dim)
        ]

    def __len__(self) -> int:
        return len(self.inner)

    def ids(self) -> list[int]:
        return self.inner.ids()

    def coords(self, pid: int) -> np.ndarray:
        return self.inner.coords(pid)

    def build(self, ids: Sequence[int], X: np.ndarray, hint: Iterable[int] = ()) -> ChangeLog:
        self.inner.build(ids, X, hint)
        self.inner.pop_facet_deltas()
        for f, fac in enumerate(self.facets):
            members = {pid: self.inner.snapped(pid) for pid in self.inner.facet_members(f)}
            fac.build(members)
            for pid in fac.assigned():
                self._bump(pid, 1)
        return self._flush()

    def _apply_inner(self) -> None:
        per_facet: dict[int, list[tuple[int | None, int | None]]] = {}
        for f, added, removed in self.inner.pop_facet_deltas():
            per_facet.setdefault(f, []).append((added, removed))
        for f, changes in per_facet.items():
            fac = self.facets[f]
            # net membership change of L_f for this batch
            final: dict[int, bool] = {}
            for added, removed in changes:
                if removed is not None:
                    final[removed] = False
                if added is not None:
                    final[added] = True
            adds = sorted(p for p, v in final.items() if v and p not in fac.xhat)
            dels = sorted(p for p, v in final.items() if not v and p in fac.xhat)
            # insert before deleting so a replaced point's slot can be taken
            # over by its successor inside the same walk
            for pid in adds:
                self._record(fac.insert(pid, self.inner.snapped(pid)))
            for pid in dels:
                self._record(fac.delete(pid))

    def _record(self, change: tuple[int | None, int | None]) -> None:
        added, removed = change
        if added is not None:
            self._bump(added, 1)
        if removed is not None:
            self._bump(removed, -1)

    def insert(self, pid: int, x) -> ChangeLog:
        self.inner.insert(pid, x)
        self._apply_inner()
        return self._flush()

    def delete(self, pid: int) -> ChangeLog:
        self.inner.delete(pid)
        self._apply_inner()
        return self._flush()

    def update(self, removals: Iterable[int] = (), additions: Iterable[tuple[int, np.ndarray]] = ()) -> ChangeLog:
        for pid in removals:
            self.inner.delete(pid)
        for pid, x in additions:
            self.inner.insert(pid, _as_box_point(x, self.dim))
        self._apply_inner()
        return self._flush()

    # -- structural checks (independent brute-force routes)

    def check_invariants(self) -> dict[str, bool]:
        res = {"P1": True, "P2": True, "P3": True, "partition": True}
        for fac in self.facets:
            assigned = fac.phi[fac.phi >= 0]
            if len(np.unique(assigned)) != len(assigned):
                res["P1"] = False
            members = sorted(fac.members())
            if set(assigned.tolist()) | fac.X != set(members) or fac.X & set(assigned.tolist()):
                res["partition"] = False
            replay = greedy_replay(fac.order, fac.B, members, np.array([fac.xhat[m] for m in members]))
            if not np.array_equal(replay, fac.phi):
                res["P2"] = False
            if members:
                nn, _ = snapped_nn(members, np.array([fac.xhat[m] for m in members]), fac.B)
                if not set(nn.tolist()) <= set(assigned.tolist()):
                    res["P3"] = False
        return res


def greedy_replay(order: np.ndarray, B: np.ndarray, ids: Sequence[int], Xhat) -> np.ndarray:
    """From-scratch greedy matching of ``B`` (visited in ``order``) to points.

    Plain brute force: every step scans all remaining points.
    """
    phi = np.full(len(B), -1, dtype=np.int64)
    if len(ids) == 0:
        return phi
    ids = np.asarray(ids, dtype=np.int64)
    srt = np.argsort(ids, kind="stable")
    D = sqdist(np.asarray(Xhat, dtype=float).reshape(len(ids), -1)[srt], B)
    taken = np.zeros(len(ids), dtype=bool)
    for step, b in enumerate(order):
        if step == len(ids):
            break
        col = np.where(taken, np.inf, D[:, b])
        j = int(np.argmin(col))
        taken[j] = True
        phi[b] = ids[srt[j]]
    return phi


# functional aliases used by the CLI and tests


def build_grid_kernel(ids, X, eps: float) -> GridKernel:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    g = GridKernel(X.shape[1], eps)
    g.build(list(ids), X)
    return g


def build_phi_kernel(ids, X, eps: float, c: float = 2.0) -> PhiKernel:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    k = PhiKernel(X.shape[1], eps, c)
    k.build(list(ids), X)
    return k
