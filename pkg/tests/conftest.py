import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")


def ball(rng, n, d):
    X = rng.normal(size=(n, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    return X * rng.random((n, 1)) ** (1 / d)


def fuzz(engine, rng, d, steps, p_del=0.4, live=None, next_id=0, draw=None, after=None):
    """Drive ``engine`` with random inserts/deletes.  Returns (live, logs)."""
    live = {} if live is None else live
    draw = draw or (lambda: rng.uniform(-1, 1, d))
    logs = []
    for _ in range(steps):
        if live and rng.random() < p_del:
            pid = int(rng.choice(list(live)))
            del live[pid]
            log = engine.delete(pid)
        else:
            x = draw()
            live[next_id] = x
            log = engine.insert(next_id, x)
            next_id += 1
        logs.append(log)
        if after:
            after(live, log)
    return live, logs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
