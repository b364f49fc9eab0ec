"""Three-stage composition: a layered kernel of P, a weak epoch kernel of
that, and a strong epoch kernel of the result.

Each stage runs at eps/3 and consumes the previous stage's ChangeLog as its
update stream, so the final kernel is an eps-kernel of P whose per-update
churn is bounded by the product of the stage bounds.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .epochs import EpochEngine
from .errors import BadParams, DuplicateId, UnknownId, UnsupportedDimension
from .fixed import ChangeLog, check_eps
from .geometry import MAX_DIM
from .layered import LayerStack


@dataclass
class StabilityStats:
    updates: int = 0
    total_changes: int = 0
    max_changes_per_update: int = 0
    kernel_size: int = 0
    history: deque | None = None

    def record(self, log: ChangeLog, kernel_size: int) -> None:
        n = len(log)
        self.updates += 1
        self.total_changes += n
        self.max_changes_per_update = max(self.max_changes_per_update, n)
        self.kernel_size = kernel_size
        if self.history is not None:
            self.history.append(n)

    def copy(self) -> "StabilityStats":
        hist = deque(self.history, maxlen=self.history.maxlen) if self.history is not None else None
        return StabilityStats(
            self.updates, self.total_changes, self.max_changes_per_update, self.kernel_size, hist
        )

    def as_dict(self) -> dict:
        return {
            "updates": self.updates,
            "total_changes": self.total_changes,
            "max_changes_per_update": self.max_changes_per_update,
            "kernel_size": self.kernel_size,
            "mean_changes_per_update": self.total_changes / self.updates if self.updates else 0.0,
        }


@dataclass
class PipelineConfig:
    drain_rate: int = 4
    stage3_budget: int = 32
    alpha: float = 0.1
    fatness: float = 1.0
    phi_c: float = 2.0
    history: int | None = None
    stage_stats: bool = True
    extra: dict = field(default_factory=dict)


class Pipeline:
    def __init__(self, eps: float, dim: int, config: PipelineConfig | None = None):
        self.eps = check_eps(eps)
        if not (2 <= dim <= MAX_DIM):
            raise UnsupportedDimension(f"dimension must be in [2, {MAX_DIM}], got {dim}")
        self.dim = dim
        self.config = cfg = config or PipelineConfig()
        self.stage_eps = self.eps / 3
        self.stage1 = LayerStack(dim, self.stage_eps, alpha=cfg.alpha, drain_rate=cfg.drain_rate)
        self.stage2 = EpochEngine(
            dim, self.stage_eps, "weak", alpha=cfg.alpha, fatness=cfg.fatness,
            drain_rate=cfg.drain_rate, phi_c=cfg.phi_c,
        )
        self.stage3 = EpochEngine(
            dim, self.stage_eps, "strong", alpha=cfg.alpha, fatness=cfg.fatness,
            drain_rate=cfg.drain_rate, change_budget=cfg.stage3_budget, phi_c=cfg.phi_c,
        )
        self._x: dict[int, np.ndarray] = {}
        self._next_id = 0
        self.stats = StabilityStats(history=deque(maxlen=cfg.history) if cfg.history else None)
        self.stage_stats = [StabilityStats() for _ in range(3)]

    def __len__(self) -> int:
        return len(self._x)

    def __contains__(self, pid) -> bool:
        return pid in self._x

    def coords(self, pid: int) -> np.ndarray:
        return self._x[pid]

    def kernel(self) -> set[int]:
        return self.stage3.kernel()

    def stats_snapshot(self) -> StabilityStats:
        return self.stats.copy()

    def build(self, ids, X) -> None:
        """Bulk-load an initial point set (not counted as updates)."""
        ids = [int(i) for i in ids]
        X = np.asarray(X, dtype=float).reshape(len(ids), self.dim)
        for pid, x in zip(ids, X):
            if pid in self._x:
                raise DuplicateId(pid)
            self._x[pid] = x
            self._next_id = max(self._next_id, pid + 1)
        self.stage1.build(ids, X)
        k1 = sorted(self.stage1.kernel())
        self.stage2.build(k1, [self._x[i] for i in k1])
        k2 = sorted(self.stage2.kernel())
        self.stage3.build(k2, [self._x[i] for i in k2])
        self.stats.kernel_size = self.stage3.kernel_size()

    def _cascade(self, log1: ChangeLog) -> ChangeLog:
        log2 = self.stage2.update(log1.removed, [(i, self._x[i]) for i in log1.added])
        log3 = self.stage3.update(log2.removed, [(i, self._x[i]) for i in log2.added])
        if self.config.stage_stats:
            for st, log, eng in zip(self.stage_stats, (log1, log2, log3), (self.stage1, self.stage2, self.stage3)):
                st.record(log, eng.kernel_size())
        self.stats.record(log3, self.stage3.kernel_size())
        return log3

    def insert(self, x, pid: int | None = None) -> tuple[int, ChangeLog]:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.dim:
            raise BadParams(f"expected {self.dim} coordinates")
        if not np.all(np.isfinite(x)):
            raise BadParams("coordinates must be finite")
        if pid is None:
            pid = self._next_id
        if pid in self._x:
            raise DuplicateId(pid)
        self._next_id = max(self._next_id, pid + 1)
        self._x[pid] = x
        log = self._cascade(self.stage1.insert(pid, x))
        return pid, log

    def delete(self, pid: int) -> ChangeLog:
        if pid not in self._x:
            raise UnknownId(pid)
        log1 = self.stage1.delete(pid)
        log = self._cascade(log1)
        del self._x[pid]
        return log

    def audit(self) -> bool:
        """Each stage's ground set is the previous stage's published kernel."""
        k1 = self.stage1.kernel()
        k2 = self.stage2.kernel()
        return (
            set(self.stage1._x) == set(self._x)
            and set(self.stage2._x) == k1
            and set(self.stage3._x) == k2
            and self.stage3.kernel() <= k2 <= k1 <= set(self._x)
        )


def pipeline_new(eps: float, d: int, **kwargs) -> Pipeline:
    return Pipeline(eps, d, PipelineConfig(**kwargs) if kwargs else None)
