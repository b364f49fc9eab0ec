"""Epoch engine: an outer shield of peeled anchor layers around a
fixed-anchor kernel of the remaining inner points.

At the start of an epoch, m layers of anchor points are peeled from an
alpha-kernel of the ground set.  The last layer's frame, blown up by
(1 + alpha), is the inner box; points inside it are handed to a fixed-anchor
engine (grid for ``weak`` mode, phi-map for ``strong``), everything else is
shield and is published verbatim.  Updates outside the inner box touch only
the shield.  After m/2 shield updates a replacement epoch is built and
published gradually while the current one stays live.
"""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from .anchors import AnchorFrame, select_anchors_arrays
from .errors import BadParams, DegenerateSpan, DuplicateId, UnknownId
from .fixed import ChangeLog, GridKernel, PhiKernel, check_eps
from .layered import DeamortQueue, LayerStack

MODES = ("weak", "strong")


def layer_count(eps: float, dim: int, mode: str) -> int:
    if mode == "weak":
        return math.ceil(eps ** -(dim - 1) - 1e-9)
    if mode == "strong":
        return math.ceil(eps ** (-(dim - 1) / 2) - 1e-9)
    raise BadParams(f"unknown epoch mode {mode!r}")


def inner_eps(eps: float, alpha: float, fatness: float) -> float:
    return eps / (2 * (1 + alpha) * fatness**2)


class EpochCore:
    """One epoch: shield layers, inner frame and inner engine."""

    def __init__(
        self,
        dim: int,
        eps: float,
        mode: str,
        points: dict[int, np.ndarray],
        alpha: float = 0.1,
        fatness: float = 1.0,
        phi_c: float = 2.0,
        hint: Iterable[int] = (),
    ):
        self.dim = dim
        self.eps = eps
        self.mode = mode
        self.alpha = alpha
        self.m = layer_count(eps, dim, mode)
        self.delta = inner_eps(eps, alpha, fatness)
        self.shield: set[int] = set()
        self.layers: list[tuple[int, ...]] = []
        self.layer_of: dict[int, int] = {}
        self.layer_deletions: list[int] = []
        self.frame: AnchorFrame | None = None
        self.engine: GridKernel | PhiKernel | None = None
        self.inner: set[int] = set()
        self.shield_updates = 0
        self.trivial = len(points) <= (dim + 1) * self.m or len(points) < dim + 2
        if self.trivial:
            self.shield = set(points)
            return
        self._peel(points, phi_c, set(hint))

    def _peel(self, points: dict[int, np.ndarray], phi_c: float, hint: set[int]) -> None:
        ids = sorted(points)
        X = np.array([points[i] for i in ids])
        feeder = LayerStack(self.dim, self.alpha, deamortize=False)
        feeder.build(ids, X)
        frame = None
        for _ in range(self.m):
            L = np.array(sorted(feeder.kernel()), dtype=np.int64)
            if len(L) < self.dim + 1:
                break
            try:
                frame = select_anchors_arrays(L, np.array([points[int(i)] for i in L]))
            except DegenerateSpan:
                break
            layer = frame.ids
            for pid in layer:
                self.layer_of[pid] = len(self.layers)
            self.layers.append(layer)
            self.layer_deletions.append(0)
            self.shield.update(layer)
            feeder.update(removals=layer)
        residue = [i for i in ids if i not in self.shield]
        if frame is None or len(self.layers) < self.m:
            # too few layers could be peeled: the whole set is shield
            self.shield.update(residue)
            self.trivial = not self.layers
            return
        self.frame = frame
        Y = frame.apply(np.array([points[i] for i in residue])) / (1 + self.alpha) if residue else np.empty((0, self.dim))
        inside = np.all(np.abs(Y) <= 1.0, axis=1) if residue else np.empty(0, dtype=bool)
        for pid, ok in zip(residue, inside):
            if ok:
                self.inner.add(pid)
            else:
                self.shield.add(pid)
        if self.mode == "weak":
            self.engine = GridKernel(self.dim, self.delta)
        else:
            self.engine = PhiKernel(self.dim, self.delta, phi_c)
        idx = [k for k, ok in enumerate(inside) if ok]
        self.engine.build([residue[k] for k in idx], Y[idx], hint)

    # -- queries

    def kernel(self) -> set[int]:
        out = set(self.shield)
        if self.engine is not None:
            out |= self.engine.kernel()
        return out

    def in_kernel(self, pid: int) -> bool:
        return pid in self.shield or (self.engine is not None and pid in self.engine)

    def intact_layer(self) -> bool:
        """Some peeled layer has lost none of its points (trivially true
        when everything is shield)."""
        if self.engine is None:
            return True
        return any(c == 0 for c in self.layer_deletions)

    def _inner_coords(self, x: np.ndarray) -> np.ndarray | None:
        if self.frame is None or self.engine is None:
            return None
        y = self.frame.apply(x) / (1 + self.alpha)
        if np.all(np.abs(y) <= 1.0):
            return y
        return None

    # -- updates

    def insert(self, pid: int, x: np.ndarray) -> ChangeLog:
        y = self._inner_coords(x)
        if y is not None:
            self.inner.add(pid)
            return self.engine.insert(pid, y)
        self.shield.add(pid)
        self.shield_updates += 1
        return ChangeLog([pid], [])

    def delete(self, pid: int) -> ChangeLog:
        if pid in self.inner:
            self.inner.discard(pid)
            return self.engine.delete(pid)
        self.shield.discard(pid)
        self.shield_updates += 1
        layer = self.layer_of.pop(pid, None)
        if layer is not None:
            self.layer_deletions[layer] += 1
        return ChangeLog([], [pid])


class EpochEngine:
    """Stable eps-kernel of size O(m) with m shield layers per epoch."""

    def __init__(
        self,
        dim: int,
        eps: float,
        mode: str = "strong",
        alpha: float = 0.1,
        fatness: float = 1.0,
        drain_rate: int = 4,
        change_budget: float | None = None,
        phi_c: float = 2.0,
    ):
        if mode not in MODES:
            raise BadParams(f"mode must be one of {MODES}, got {mode!r}")
        self.dim = dim
        self.eps = check_eps(eps)
        self.mode = mode
        self.alpha = alpha
        self.fatness = fatness
        self.phi_c = phi_c
        self.m = layer_count(self.eps, dim, mode)
        self.delta = inner_eps(self.eps, alpha, fatness)
        if change_budget is None:
            bound = 4 * dim if mode == "strong" else 2 * dim
            change_budget = drain_rate + bound
        self.pub = DeamortQueue(drain_rate, change_budget)
        self._x: dict[int, np.ndarray] = {}
        self.live = self._core({})
        self.incoming: EpochCore | None = None
        self.stats = {"epochs": 1, "switches": 0, "forced_flushes": 0}

    def _core(self, hint: Iterable[int]) -> EpochCore:
        return EpochCore(
            self.dim, self.eps, self.mode, self._x, self.alpha, self.fatness, self.phi_c, hint
        )

    # -- queries

    def __len__(self) -> int:
        return len(self._x)

    def __contains__(self, pid) -> bool:
        return pid in self._x

    def kernel(self) -> set[int]:
        return set(self.pub.published)

    def kernel_size(self) -> int:
        return len(self.pub.published)

    def coords(self, pid: int) -> np.ndarray:
        return self._x[pid]

    def in_transition(self) -> bool:
        return self.incoming is not None

    # -- construction

    def build(self, ids: Iterable[int], X) -> ChangeLog:
        ids = [int(i) for i in ids]
        X = np.asarray(X, dtype=float).reshape(len(ids), self.dim)
        for pid, x in zip(ids, X):
            if pid in self._x:
                raise DuplicateId(pid)
            self._x[pid] = x
        self.live = self._core(())
        for pid in sorted(self.live.kernel()):
            self.pub.force_add(pid)
        return self.pub.flush_log()

    # -- updates

    def _live_log(self, log: ChangeLog) -> None:
        for pid in log.added:
            self.pub.force_add(pid)
        for pid in log.removed:
            if self.incoming is not None and self.incoming.in_kernel(pid):
                continue
            self.pub.force_remove(pid)

    def _incoming_log(self, log: ChangeLog) -> None:
        for pid in log.added:
            self.pub.request_add(pid)
        for pid in log.removed:
            self.pub.cancel_add(pid)

    def update(self, removals: Iterable[int] = (), additions: Iterable[tuple[int, np.ndarray]] = ()) -> ChangeLog:
        for pid in removals:
            if pid not in self._x:
                raise UnknownId(pid)
            del self._x[pid]
            if self.incoming is not None:
                self._incoming_log(self.incoming.delete(pid))
            self._live_log(self.live.delete(pid))
            self.pub.force_remove(pid)
        for pid, x in additions:
            if pid in self._x:
                raise DuplicateId(pid)
            x = np.asarray(x, dtype=float).reshape(self.dim)
            self._x[pid] = x
            if self.incoming is not None:
                self._incoming_log(self.incoming.insert(pid, x))
            self._live_log(self.live.insert(pid, x))
        self._schedule()
        return self._tick()

    def insert(self, pid: int, x) -> ChangeLog:
        return self.update((), [(pid, x)])

    def delete(self, pid: int) -> ChangeLog:
        return self.update([pid], ())

    def _schedule(self) -> None:
        if self.incoming is None and self.live.shield_updates >= math.ceil(self.live.m / 2):
            self.incoming = self._core(self.pub.published)
            self.stats["epochs"] += 1
            for pid in sorted(self.incoming.kernel()):
                self.pub.request_add(pid)
        if self.incoming is not None and not self.live.intact_layer():
            # the live epoch can no longer vouch for its kernel; the shield
            # count may overrun m meanwhile, validity only needs one intact layer
            self.stats["forced_flushes"] += 1
            for pid in list(self.pub.pending_adds):
                self.pub.force_add(pid)

    def _tick(self) -> ChangeLog:
        ops = self.pub.drain(self.pub.allowance())
        if self.incoming is not None and not self.pub.pending_adds:
            self.live, self.incoming = self.incoming, None
            self.stats["switches"] += 1
            for pid in sorted(self.pub.published - self.live.kernel()):
                self.pub.request_remove(pid)
            self.pub.drain(ops)
        return self.pub.flush_log()
