"""Layered dynamic kernel with budgeted rebuilds.

The live points are split into layers P_1 (innermost, largest) .. P_h
(outermost, small).  Each inner layer carries an anchor frame and a grid
kernel in that frame; the outermost layer is its own kernel.  Every update
spends one unit of every layer's rebuild budget; when a budget runs out
that layer and everything outside it are rebuilt.

Rebuilds are de-amortized: the new layers are built at once, but their
kernel reaches the published set through a :class:`DeamortQueue` while the
old layers stay live, so the published set is always a valid kernel and
changes by a bounded amount per update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .anchors import AnchorFrame, select_anchors_arrays
from .errors import DegenerateSpan, DuplicateId, UnknownId
from .fixed import ChangeLog, GridKernel, check_eps
from .geometry import build_direction_net


class DeamortQueue:
    """Published id set fed by forced changes and FIFO pending work.

    Forced operations take effect immediately.  Pending operations are
    drained by :meth:`tick`, at least ``drain_rate`` per tick and, when a
    ``change_budget`` is set, enough to bring the tick's total up to it.
    """

    def __init__(self, drain_rate: int = 4, change_budget: float | None = None):
        self.drain_rate = drain_rate
        self.change_budget = change_budget
        self.published: set[int] = set()
        self.pending_adds: dict[int, None] = {}
        self.pending_removes: dict[int, None] = {}
        self._touched: dict[int, bool] = {}
        self._forced = 0
        self.max_pending = 0

    def _mark(self, pid: int) -> None:
        if pid not in self._touched:
            self._touched[pid] = pid in self.published

    def force_add(self, pid: int) -> None:
        self.pending_adds.pop(pid, None)
        self.pending_removes.pop(pid, None)
        if pid not in self.published:
            self._mark(pid)
            self.published.add(pid)
            self._forced += 1

    def force_remove(self, pid: int) -> None:
        self.pending_adds.pop(pid, None)
        self.pending_removes.pop(pid, None)
        if pid in self.published:
            self._mark(pid)
            self.published.discard(pid)
            self._forced += 1

    def request_add(self, pid: int) -> None:
        self.pending_removes.pop(pid, None)
        if pid not in self.published:
            self.pending_adds[pid] = None

    def request_remove(self, pid: int) -> None:
        self.pending_adds.pop(pid, None)
        if pid in self.published:
            self.pending_removes[pid] = None

    def cancel_add(self, pid: int) -> None:
        self.pending_adds.pop(pid, None)

    def cancel_remove(self, pid: int) -> None:
        self.pending_removes.pop(pid, None)

    def idle(self) -> bool:
        return not self.pending_adds and not self.pending_removes

    def allowance(self) -> float:
        if self.change_budget is None:
            return self.drain_rate
        return max(self.drain_rate, self.change_budget - self._forced)

    def drain(self, ops: float) -> float:
        """Apply up to ``ops`` pending operations, adds first; return the rest."""
        while ops > 0 and (self.pending_adds or self.pending_removes):
            if self.pending_adds:
                pid = next(iter(self.pending_adds))
                del self.pending_adds[pid]
                self._mark(pid)
                self.published.add(pid)
            else:
                pid = next(iter(self.pending_removes))
                del self.pending_removes[pid]
                self._mark(pid)
                self.published.discard(pid)
            ops -= 1
        return ops

    def flush_log(self) -> ChangeLog:
        self.max_pending = max(self.max_pending, len(self.pending_adds) + len(self.pending_removes))
        log = ChangeLog()
        for pid, was in self._touched.items():
            now = pid in self.published
            if now and not was:
                log.added.append(pid)
            elif was and not now:
                log.removed.append(pid)
        log.added.sort()
        log.removed.sort()
        self._touched = {}
        self._forced = 0
        return log


@dataclass(eq=False)
class Layer:
    members: set[int]
    frame: AnchorFrame | None
    engine: GridKernel | None
    budget: int
    size_at_build: int

    def in_kernel(self, pid: int) -> bool:
        if self.engine is None:
            return pid in self.members
        return pid in self.engine

    def kernel(self) -> set[int]:
        if self.engine is None:
            return set(self.members)
        return self.engine.kernel()


@dataclass
class _Transition:
    start: int
    incoming: list[Layer]
    home: dict[int, Layer] = field(default_factory=dict)


class LayerStack:
    """Stable eps-kernel of a dynamic point set in general position in R^d."""

    def __init__(
        self,
        dim: int,
        eps: float,
        gamma_layer: float = 2.0,
        alpha: float = 0.1,
        drain_rate: int = 4,
        change_budget: float | None = None,
        deamortize: bool = True,
    ):
        self.dim = dim
        self.eps = check_eps(eps)
        self.gamma_layer = gamma_layer
        self.alpha = alpha
        self.deamortize = deamortize
        self.drain_rate = drain_rate
        if change_budget is None:
            change_budget = drain_rate + 2 * dim
        self.change_budget = change_budget
        self.cap = math.ceil(self.eps ** -(dim - 1) - 1e-9)
        self.pub = DeamortQueue(drain_rate if deamortize else math.inf, change_budget if deamortize else None)
        self._x: dict[int, np.ndarray] = {}
        self.layers: list[Layer] = []
        self._home: dict[int, Layer] = {}
        self._tr: _Transition | None = None
        radius = math.pi / 8 if dim == 2 else math.pi / 4
        self._score_dirs = build_direction_net(dim, radius).dirs
        self.stats = {"rebuilds": 0, "transitions": 0, "overdue": 0, "switches": 0}

    # -- queries

    def __len__(self) -> int:
        return len(self._x)

    def __contains__(self, pid) -> bool:
        return pid in self._x

    def coords(self, pid: int) -> np.ndarray:
        return self._x[pid]

    def kernel(self) -> set[int]:
        """The published kernel."""
        return set(self.pub.published)

    def kernel_size(self) -> int:
        return len(self.pub.published)

    def target_kernel(self) -> set[int]:
        out: set[int] = set()
        for layer in self.layers:
            out |= layer.kernel()
        return out

    def in_transition(self) -> bool:
        return self._tr is not None

    def layer_sizes(self) -> list[int]:
        return [len(layer.members) for layer in self.layers]

    # -- construction

    def _outerness(self, X: np.ndarray) -> np.ndarray:
        proj = X @ self._score_dirs.T
        lo = proj.min(axis=0)
        width = proj.max(axis=0) - lo
        width[width <= 0] = 1.0
        depth = (proj - lo) / width
        return np.maximum(depth, 1.0 - depth).max(axis=1)

    def _make_layer(self, ids: list[int], frame: AnchorFrame | None, hint: set[int]) -> Layer:
        budget = max(1, math.ceil(self.alpha * len(ids)))
        if frame is None:
            return Layer(set(ids), None, None, budget, len(ids))
        eng = GridKernel(self.dim, self.eps)
        X = np.array([self._x[i] for i in ids])
        Y = np.clip(frame.apply(X), -1.0, 1.0)
        eng.build(ids, Y, hint)
        return Layer(set(ids), frame, eng, budget, len(ids))

    def _build_layers(self, ids: Iterable[int], hint: set[int]) -> list[Layer]:
        Q = np.array(sorted(ids), dtype=np.int64)
        layers: list[Layer] = []
        while len(Q) > self.cap:
            X = np.array([self._x[i] for i in Q])
            k_out = int(len(Q) // (1 + self.gamma_layer))
            score = self._outerness(X)
            # most outer first, smaller id breaking ties
            rank = np.lexsort((Q, -score))
            outer = np.sort(rank[:k_out])
            inner = np.sort(rank[k_out:])
            try:
                frame = select_anchors_arrays(Q[inner], X[inner])
            except DegenerateSpan:
                break
            layers.append(self._make_layer([int(i) for i in Q[inner]], frame, hint))
            Q = Q[outer]
        layers.append(self._make_layer([int(i) for i in Q], None, hint))
        return layers

    def build(self, ids: Iterable[int], X) -> ChangeLog:
        ids = [int(i) for i in ids]
        X = np.asarray(X, dtype=float).reshape(len(ids), self.dim)
        for pid, x in zip(ids, X):
            if pid in self._x:
                raise DuplicateId(pid)
            self._x[pid] = x
        self.layers = self._build_layers(self._x, set())
        self._rehome()
        for pid in sorted(self.target_kernel()):
            self.pub.force_add(pid)
        return self.pub.flush_log()

    def _rehome(self) -> None:
        self._home = {}
        for layer in self.layers:
            for pid in layer.members:
                self._home[pid] = layer

    # -- routing

    @staticmethod
    def _route(layers: list[Layer], x: np.ndarray) -> int:
        for i in range(len(layers) - 2, -1, -1):
            if layers[i].frame is not None and layers[i].frame.contains(x):
                return i
        return len(layers) - 1

    def _layer_insert(self, layer: Layer, pid: int, x: np.ndarray) -> ChangeLog:
        layer.members.add(pid)
        if layer.engine is None:
            return ChangeLog([pid], [])
        y = np.clip(layer.frame.apply(x), -1.0, 1.0)
        return layer.engine.insert(pid, y)

    def _layer_delete(self, layer: Layer, pid: int) -> ChangeLog:
        layer.members.discard(pid)
        if layer.engine is None:
            return ChangeLog([], [pid])
        return layer.engine.delete(pid)

    # -- publishing

    def _live_log(self, log: ChangeLog) -> None:
        tr = self._tr
        for pid in log.added:
            self.pub.force_add(pid)
        for pid in log.removed:
            if tr is not None and pid in tr.home and tr.home[pid].in_kernel(pid):
                continue
            self.pub.force_remove(pid)

    def _incoming_log(self, log: ChangeLog) -> None:
        for pid in log.added:
            self.pub.request_add(pid)
        for pid in log.removed:
            self.pub.cancel_add(pid)

    # -- updates

    def _insert(self, pid: int, x) -> None:
        if pid in self._x:
            raise DuplicateId(pid)
        x = np.asarray(x, dtype=float).reshape(self.dim)
        self._x[pid] = x
        if not self.layers:
            self.layers = [self._make_layer([], None, set())]
        i = self._route(self.layers, x)
        layer = self.layers[i]
        self._home[pid] = layer
        tr = self._tr
        if tr is not None and i >= tr.start:
            target = tr.incoming[self._route(tr.incoming, x)]
            tr.home[pid] = target
            self._incoming_log(self._layer_insert(target, pid, x))
        self._live_log(self._layer_insert(layer, pid, x))

    def _delete(self, pid: int) -> None:
        if pid not in self._x:
            raise UnknownId(pid)
        layer = self._home.pop(pid)
        tr = self._tr
        if tr is not None and pid in tr.home:
            self._incoming_log(self._layer_delete(tr.home.pop(pid), pid))
        self._live_log(self._layer_delete(layer, pid))
        self.pub.force_remove(pid)
        del self._x[pid]

    def update(self, removals: Iterable[int] = (), additions: Iterable[tuple[int, np.ndarray]] = ()) -> ChangeLog:
        """Apply a batch of deletions then insertions as one update."""
        for pid in removals:
            self._delete(pid)
        for pid, x in additions:
            self._insert(pid, x)
        self._spend_budgets()
        return self._tick()

    def insert(self, pid: int, x) -> ChangeLog:
        return self.update((), [(pid, x)])

    def delete(self, pid: int) -> ChangeLog:
        return self.update([pid], ())

    # -- rebuild scheduling

    def _spend_budgets(self) -> None:
        for layer in self.layers:
            layer.budget -= 1
        if self._tr is not None:
            for layer in self._tr.incoming:
                layer.budget -= 1
        due = [i for i, layer in enumerate(self.layers) if layer.budget <= 0]
        if not due:
            return
        if self._tr is not None:
            self.stats["overdue"] += 1
            return
        i = due[0]
        window = self.alpha * len(self.layers[i].members)
        start = i
        for j in range(i):
            if self.layers[j].budget < window:
                start = j
                break
        self._begin(start)

    def _begin(self, start: int) -> None:
        scope = set()
        for layer in self.layers[start:]:
            scope |= layer.members
        incoming = self._build_layers(scope, self.pub.published)
        self.stats["rebuilds"] += 1
        tr = _Transition(start, incoming)
        for layer in incoming:
            for pid in layer.members:
                tr.home[pid] = layer
        self._tr = tr
        self.stats["transitions"] += 1
        for layer in incoming:
            for pid in sorted(layer.kernel()):
                self.pub.request_add(pid)

    def _switch(self) -> None:
        tr = self._tr
        self.layers = self.layers[: tr.start] + tr.incoming
        for pid, layer in tr.home.items():
            self._home[pid] = layer
        self._tr = None
        self.stats["switches"] += 1
        target = self.target_kernel()
        for pid in sorted(self.pub.published - target):
            self.pub.request_remove(pid)

    def _tick(self) -> ChangeLog:
        ops = self.pub.allowance()
        ops = self.pub.drain(ops)
        if self._tr is not None and not self.pub.pending_adds:
            self._switch()
            self.pub.drain(ops)
        return self.pub.flush_log()

    # -- audits

    def check_partition(self) -> bool:
        seen: set[int] = set()
        for layer in self.layers:
            if seen & layer.members:
                return False
            seen |= layer.members
        return seen == set(self._x)

    def check_boxes(self) -> bool:
        for layer in self.layers:
            if layer.frame is None or not layer.members:
                continue
            X = np.array([self._x[i] for i in layer.members])
            if not np.all(layer.frame.contains(X)):
                return False
        return True
