import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from kernelstab import BadParams, PointSet, build_direction_net, gen_cyclic_perturbed, gen_sphere, greedy_kernel, ratio_experiment
from kernelstab.experiments import cover_matrix, exhaustive_min_kernel, facets_bruteforce
from kernelstab.geometry import net_violation


@pytest.mark.parametrize("n,d,expected", [(6, 3, 8), (9, 3, 14), (8, 4, 20)])
def test_cyclic_facet_count(n, d, expected):
    inst = gen_cyclic_perturbed(n, d, 0.2, seed=1)
    V = inst.points.arrays()[1][:n]
    assert inst.meta["facets"] == expected
    assert len(ConvexHull(V).simplices) == expected


def test_cyclic_pushes_outside_own_facet():
    inst = gen_cyclic_perturbed(10, 3, 0.2, seed=3)
    X = inst.points.arrays()[1]
    V = X[:10]
    for normal, pid in zip(inst.directions, inst.facet_point_ids):
        assert X[pid] @ normal > (V @ normal).max()
    assert inst.meta["min_margin"] > 0
    assert 0 < inst.meta["eps_effective"] <= 0.2


def test_cyclic_convex_position():
    inst = gen_cyclic_perturbed(10, 3, 0.2, seed=0)
    X = inst.points.arrays()[1]
    assert len(ConvexHull(X).vertices) == len(X)


def test_cyclic_deterministic_and_bad_params():
    a = gen_cyclic_perturbed(8, 3, 0.1, seed=4)
    b = gen_cyclic_perturbed(8, 3, 0.1, seed=4)
    assert np.array_equal(a.points.arrays()[1], b.points.arrays()[1])
    with pytest.raises(BadParams):
        gen_cyclic_perturbed(8, 5, 0.1)
    with pytest.raises(BadParams):
        gen_cyclic_perturbed(3, 3, 0.1)


def test_sphere_axis_points():
    X = gen_sphere(4, 2).points.arrays()[1]
    assert np.array_equal(X, [[1, 0], [0, 1], [-1, 0], [0, -1]])


def test_sphere_gaps_and_seed():
    inst = gen_sphere(100, 3)
    assert inst.meta["gap_ratio"] <= 2
    a, b = gen_sphere(50, 3, seed=9), gen_sphere(50, 3, seed=9)
    assert np.array_equal(a.points.arrays()[1], b.points.arrays()[1])
    X = gen_sphere(60, 4, seed=2).points.arrays()[1]
    assert np.allclose(np.linalg.norm(X, axis=1), 1)
    with pytest.raises(BadParams):
        gen_sphere(2, 2)


def test_greedy_segment():
    P = PointSet(2, {0: (0, 0), 1: (0.5, 0.5), 2: (1, 1)})
    assert greedy_kernel(P, 0.3, build_direction_net(2, 0.01)) == {0, 2}


def test_greedy_square():
    P = PointSet(2, {0: (0, 0), 1: (1, 0), 2: (0, 1), 3: (1, 1)})
    assert greedy_kernel(P, 0.01, build_direction_net(2, 0.01)) == {0, 1, 2, 3}


@given(st.integers(2, 12), st.integers(2, 3), st.integers(0, 2**32 - 1))
def test_greedy_at_least_exhaustive(n, d, seed):
    r = np.random.default_rng(seed)
    P = PointSet.from_array(r.normal(size=(n, d)))
    net = build_direction_net(d, 0.3 if d == 3 else 0.05)
    eps = float(r.uniform(0.05, 0.4))
    g = greedy_kernel(P, eps, net)
    assert len(g) >= exhaustive_min_kernel(P, eps, net)
    X = P.arrays()[1]
    K = np.array([P[i] for i in sorted(g)])
    assert net_violation(X, K, eps, net)[0] <= 1e-9


def test_cover_matrix_self():
    X = np.random.default_rng(0).normal(size=(30, 2))
    dirs = build_direction_net(2, 0.1).dirs
    C = cover_matrix(X, 0.1, dirs)
    assert np.all(C[np.arange(len(dirs)), np.argmax(dirs @ X.T, axis=1)])


def test_ratio_sphere_d2():
    for seed in range(5):
        rep = ratio_experiment(gen_sphere(200, 2, seed=seed), 0.05)
        assert 1 <= rep.ratio <= 8


def test_ratio_cyclic_d3():
    inst = gen_cyclic_perturbed(10, 3, 0.2, seed=0)
    rep = ratio_experiment(inst, inst.meta["eps_effective"])
    assert rep.kappa_half >= inst.meta["facets"]
    assert rep.kappa_eps <= 10
    assert rep.meta["facet_points_in_half_kernel"] == inst.meta["facets"]


def test_ratio_tiny_instance():
    inst = gen_sphere(3, 2)
    assert ratio_experiment(inst, 0.1).ratio == 1
