import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecg_alarm.swarm import (
    INF,
    BasisTransform,
    MopsoConfig,
    ObjectiveEvaluator,
    ParetoArchive,
    SwarmConfigError,
    dominates,
    embed_coefficients,
    expand,
    front_weakly_dominates,
    identity_coefficients,
    knee_point,
    linear_basis,
    mopso,
    objective_separability,
    objective_symmetry,
    polynomial_basis,
    select_operating_point,
)

from fixtures import blob_clusters


# -- basis -------------------------------------------------------------------

def test_basis_sizes():
    assert polynomial_basis(8).size == 45
    assert polynomial_basis(2).names == ["1", "x1", "x2", "x1*x2", "x1*x1", "x2*x2"]
    assert linear_basis(8).size == 8


def test_first_basis_vector():
    B = polynomial_basis(3)
    w = np.zeros(B.size)
    w[0] = 1
    z = expand(B, w, np.array([0.3, -2.0, 5.0]))
    assert z[0] == 1 and np.all(z[1:] == 0)


def test_zero_input_only_constant():
    B = polynomial_basis(4)
    w = np.ones(B.size) / math.sqrt(B.size)
    z = expand(B, w, np.zeros(4))
    assert z[0] != 0 and np.all(z[1:] == 0)


def test_unit_norm_required():
    with pytest.raises(ValueError):
        expand(linear_basis(2), np.array([1.0, 1.0]), np.zeros(2))


def test_kernel_identity():
    B = polynomial_basis(2)
    r2 = math.sqrt(2)
    w = np.array([1, r2, r2, r2, 1, 1])
    rng = np.random.default_rng(0)
    for x, y in rng.normal(size=(100, 2, 2)):
        lhs = expand(B, w, x, check_norm=False) @ expand(B, w, y, check_norm=False)
        assert lhs == pytest.approx((1 + x @ y) ** 2, abs=1e-9)


def test_identity_coefficients_preserve_angles():
    B = polynomial_basis(3)
    w = identity_coefficients(B)
    X = np.random.default_rng(1).normal(size=(5, 3))
    Z = expand(B, w, X)[:, B.linear_mask()]
    assert np.allclose(Z, X / math.sqrt(3))


# -- objectives --------------------------------------------------------------

def test_symmetry_orthogonal():
    cents = {"N": np.zeros(3), "V": -np.eye(3)[0], "S": -np.eye(3)[1], "F": -np.eye(3)[2]}
    assert objective_symmetry(cents) == pytest.approx(1.0)


def test_symmetry_antipodal():
    cents = {"N": np.zeros(2), "V": np.array([1.0, 0]), "S": np.array([-1.0, 0]), "F": np.array([0, 1.0])}
    assert objective_symmetry(cents) == pytest.approx(1.0)


def test_symmetry_coincident():
    cents = {"N": np.zeros(2), "V": np.array([1.0, 0]), "S": np.array([2.0, 0]), "F": np.array([0, 1.0])}
    assert objective_symmetry(cents) == INF


def test_separability_collapsed():
    assert objective_separability({"a": [[0.0, 0]] * 3, "b": [[1.0, 1]] * 2}) == 0


def test_separability_hand_sums():
    # centroids (0, 0.5) and (2, 0): SW = 0.25 + 0.25, SB = 2 * (4 + 0.25)
    clusters = {"a": [[0.0, 0.0], [0.0, 1.0]], "b": [[2.0, 0.0]]}
    assert objective_separability(clusters) == pytest.approx(0.5 / 8.5)


def test_separability_identical():
    assert objective_separability({"a": [[1.0, 1]] * 2, "b": [[1.0, 1]]}) == INF


def test_evaluator_matches_direct_objectives():
    clusters = blob_clusters(3, d=3)
    B = polynomial_basis(3)
    ev = ObjectiveEvaluator(clusters, B)
    w = np.random.default_rng(4).normal(size=B.size)
    w /= np.linalg.norm(w)
    Z = {k: expand(B, w, v) for k, v in clusters.items()}
    o2 = objective_separability(Z)
    o1 = objective_symmetry({k: z.mean(axis=0) for k, z in Z.items()})
    assert ev(w) == pytest.approx((o1, o2), rel=1e-9)


# -- dominance and archive ----------------------------------------------------

@pytest.mark.parametrize("a,b,out", [((1, 1), (2, 2), True), ((1, 2), (2, 1), False), ((1, 1), (1, 1), False),
                                     ((1, 2), (1, 3), True)])
def test_dominates(a, b, out):
    assert dominates(a, b) is out


@settings(max_examples=80)
@given(st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=1, max_size=60), st.integers(1, 20))
def test_archive_property(points, capacity):
    arch = ParetoArchive(capacity)
    for i, p in enumerate(points):
        arch.add(np.array([float(i)]), p)
        assert arch.is_nondominated()
        assert len(arch) <= capacity
    # whatever is kept, no input point strictly beats the archive's best o1 or o2
    objs = arch.objectives()
    assert objs[:, 0].min() == min(p[0] for p in points) or len(arch) == capacity
    assert objs[:, 1].min() == min(p[1] for p in points) or len(arch) == capacity


def test_archive_rejects_nonfinite():
    arch = ParetoArchive(5)
    assert not arch.add(np.zeros(1), (INF, 1.0))
    assert len(arch) == 0


def test_archive_csv_round_trip():
    arch = ParetoArchive(10)
    for i, p in enumerate([(1, 5), (2, 3), (4, 1)]):
        arch.add(np.array([i, 0.5]), p)
    back = ParetoArchive.from_csv(arch.to_csv())
    assert back.to_csv() == arch.to_csv()


def test_knee_and_beta():
    arch = ParetoArchive(10)
    for i, p in enumerate([(0, 10), (1, 2), (2, 1.5), (10, 0)]):
        arch.add(np.array([float(i)]), p)
    assert knee_point(arch).objectives == (1, 2)
    assert select_operating_point(arch, beta=1.0).objectives == (0, 10)
    assert select_operating_point(arch, beta=0.0).objectives == (10, 0)
    with pytest.raises(ValueError):
        select_operating_point(arch, beta=1.5)


def test_front_weak_dominance():
    assert front_weakly_dominates(np.array([[1, 1]]), np.array([[1, 2], [2, 1]]))
    assert not front_weakly_dominates(np.array([[1, 3]]), np.array([[2, 1]]))


# -- MOPSO -------------------------------------------------------------------

def test_single_particle_no_iterations():
    clusters = blob_clusters(0, d=3)
    B = linear_basis(3)
    res = mopso(clusters, B, MopsoConfig(swarm_size=1, iterations=0, seed=5))
    assert len(res.archive) == 1
    w = res.archive.entries[0].w
    assert res.archive.entries[0].objectives == ObjectiveEvaluator(clusters, B, seed=5)(w)


def test_config_validation():
    with pytest.raises(SwarmConfigError):
        MopsoConfig(inertia=-1)
    with pytest.raises(SwarmConfigError):
        MopsoConfig(swarm_size=0)


def test_seeded_determinism():
    clusters = blob_clusters(1, d=4)
    runs = [mopso(clusters, polynomial_basis(4), MopsoConfig(10, 10, seed=9)).archive.to_csv() for _ in range(2)]
    assert runs[0] == runs[1]


def test_archive_invariants_during_search():
    clusters = blob_clusters(7)
    B = polynomial_basis(8)
    res = mopso(clusters, B, MopsoConfig(30, 50, seed=3))
    for objs in res.history:
        assert not any(dominates(a, b) for a in objs for b in objs)
    for beta in (0.0, 0.3, 1.0):
        best = [np.min(beta * h[:, 0] + (1 - beta) * h[:, 1]) for h in res.history]
        assert np.all(np.diff(best) <= 0)
    base = ObjectiveEvaluator(clusters, B, seed=3)(identity_coefficients(B))
    for o1, o2 in res.archive.objectives():
        assert o1 <= base[0] or o2 <= base[1]
    for e in res.archive:
        assert abs(np.linalg.norm(e.w) - 1) < 1e-9


def test_embed_coefficients():
    lin, poly = linear_basis(3), polynomial_basis(3)
    w = np.array([0.6, 0.0, 0.8])
    emb = embed_coefficients(w, lin, poly)
    X = np.random.default_rng(0).normal(size=(4, 3))
    assert np.allclose(expand(poly, emb, X)[:, poly.linear_mask()], expand(lin, w, X))


def test_basis_transform_round_trip():
    B = polynomial_basis(2)
    w = np.arange(1.0, 7.0)
    T = BasisTransform(B, w / np.linalg.norm(w))
    back = BasisTransform.from_dict(T.to_dict())
    X = np.random.default_rng(0).normal(size=(3, 2))
    assert np.array_equal(back(X), T(X))
