from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecg_alarm.classifier import (
    AlarmLabel,
    BasisSpace,
    DeterministicSpace,
    DeviationFrame,
    GlobalModel,
    IdentitySpace,
    NotInitializedError,
    PersonalConfig,
    PersonalNormalCluster,
    classify_global,
    compute_deviation_metrics,
    confirm_normal,
    deviation_analysis,
    process_stream,
    read_alarm_csv,
    write_alarm_csv,
    write_alarm_jsonl,
)
from ecg_alarm.features import FeatureSample
from ecg_alarm.swarm import BasisTransform, identity_coefficients, polynomial_basis
from ecg_alarm.synthetic import CohortConfig, cohort_centres, make_cohort, make_training_set

ORDER = "NVSF"


def brute_knn(points, labels, k, x):
    """Sort everything by (distance, index), vote, break ties by summed
    distance and then class order."""
    d = [(float(np.linalg.norm(p - x)), i) for i, p in enumerate(points)]
    d.sort()
    top = d[:k]
    count = Counter(labels[i] for _, i in top)
    total = {c: sum(dist for dist, i in top if labels[i] == c) for c in count}
    return sorted(count, key=lambda c: (-count[c], total[c], ORDER.index(c)))[0]


def test_knn_exact_training_point():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(20, 3))
    labels = list(rng.choice(list(ORDER), 20))
    model = GlobalModel(pts, labels, k=1)
    for p, lab in zip(pts, labels):
        assert classify_global(model, p) == lab


def test_knn_ten_point_oracle():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(10, 2))
    labels = list("NNNVVSSFFN")
    model = GlobalModel(pts, labels, k=3)
    for x in rng.normal(size=(50, 2)):
        assert classify_global(model, x) == brute_knn(pts, labels, 3, x)


def test_knn_tie_break_on_grid():
    # integer grid with duplicated points produces distance and vote ties
    rng = np.random.default_rng(2)
    pts = rng.integers(0, 4, size=(200, 2)).astype(float)
    labels = list(rng.choice(list(ORDER), 200))
    model = GlobalModel(pts, labels, k=4)
    for x in rng.integers(0, 4, size=(300, 2)).astype(float):
        assert classify_global(model, x) == brute_knn(pts, labels, 4, x)


def test_k_larger_than_training_set():
    with pytest.raises(ValueError):
        GlobalModel(np.zeros((3, 2)), "NNN", k=4)


def test_model_round_trip():
    rng = np.random.default_rng(3)
    model = GlobalModel(rng.normal(size=(30, 4)), list(rng.choice(list(ORDER), 30)), k=5)
    back = GlobalModel.from_dict(model.to_dict())
    for x in rng.normal(size=(100, 4)):
        assert classify_global(back, x) == classify_global(model, x)


# -- personal cluster --------------------------------------------------------

def brute_diameter(P):
    return max((float(np.linalg.norm(a - b)) for a in P for b in P), default=0.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.5, 120.0), min_size=1, max_size=60), st.integers(0, 1000))
def test_cluster_window_and_diameter(gaps, seed):
    rng = np.random.default_rng(seed)
    cl = PersonalNormalCluster("p", window_s=300, refresh_every=7)
    t = 0.0
    for g in gaps:
        t += g
        cl.add(rng.normal(size=3), t)
        times = cl.times
        assert np.all(times >= times[-1] - 300)
        assert abs(cl.r_max - brute_diameter(cl.points)) < 1e-9
        assert np.allclose(cl.centroid, cl.points.mean(axis=0), atol=1e-9)


def test_cluster_empty_centroid():
    with pytest.raises(NotInitializedError):
        PersonalNormalCluster().centroid


def test_metrics_examples():
    e1, e2 = np.eye(2)
    m = compute_deviation_metrics([np.zeros(2), e1], {"V": [e2, 3 * e2]}, np.zeros(2))
    assert m.r_max == 1 and m.d_n_max == 1
    assert m.d_x["V"] == 2


def test_metrics_farthest_member():
    rng = np.random.default_rng(4)
    P = rng.normal(size=(15, 3))
    far_pair = max(((i, j) for i in range(15) for j in range(15)), key=lambda ij: np.linalg.norm(P[ij[0]] - P[ij[1]]))
    x = P[far_pair[0]]
    m = compute_deviation_metrics(P, {"V": P + 10}, x)
    assert m.d_n_max == pytest.approx(brute_diameter(P))
    assert m.r_max == pytest.approx(brute_diameter(P))


def test_metrics_empty_cluster():
    with pytest.raises(NotInitializedError):
        compute_deviation_metrics(np.zeros((0, 2)), {"V": [[1.0, 1]]}, np.zeros(2))


def test_confirm_normal_cases():
    rng = np.random.default_rng(5)
    P = rng.normal(0, 0.1, (30, 3))
    far = {c: rng.normal(0, 0.1, (20, 3)) + 10 * np.eye(3)[j] for j, c in enumerate("VSF")}
    assert confirm_normal(compute_deviation_metrics(P, far, P.mean(axis=0)))
    assert not confirm_normal(compute_deviation_metrics(P, far, far["V"].mean(axis=0)))


def test_confirm_normal_boundary_inclusive():
    from ecg_alarm.classifier import DeviationMetrics

    m = DeviationMetrics(r_max=2.0, d_n_max=2.5, d_x={"V": 5.0}, d_n=1.0)
    assert confirm_normal(m, PersonalConfig(alpha=1.25))
    assert not confirm_normal(DeviationMetrics(2.0, 2.5 + 1e-12, {"V": 5.0}, 1.0), PersonalConfig(alpha=1.25))


# -- deviation analysis ------------------------------------------------------

def identity_frame(c_n, c_x):
    return DeviationFrame(lambda X: np.asarray(X, dtype=float), np.asarray(c_n, dtype=float), c_x)


def test_orthogonal_centroids_pick_v():
    c_x = {c: np.eye(3)[j] for j, c in enumerate("VSF")}
    assert deviation_analysis(identity_frame(np.zeros(3), c_x), 0.3 * np.eye(3)[0]) == "Vy"


def test_zero_deviation_falls_back_to_nearest():
    c_x = {"V": np.array([3.0, 0]), "S": np.array([0, 1.0]), "F": np.array([-2.0, 0])}
    assert deviation_analysis(identity_frame(np.zeros(2), c_x), np.zeros(2)) == "Sy"


def test_tie_goes_to_v():
    c_x = {"V": np.array([2.0, 0]), "S": np.array([2.0, 0]), "F": np.array([-2.0, 0])}
    assert deviation_analysis(identity_frame(np.zeros(2), c_x), np.array([1.0, 0])) == "Vy"


@settings(max_examples=50)
@given(st.integers(0, 10 ** 6), st.floats(0.01, 100))
def test_scale_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    c_x = {c: rng.normal(size=4) for c in "VSF"}
    c_n, x = rng.normal(size=4), rng.normal(size=4)
    base = deviation_analysis(identity_frame(c_n, c_x), x)
    scaled = DeviationFrame(lambda X: scale * np.asarray(X), scale * c_n, {c: scale * v for c, v in c_x.items()})
    assert deviation_analysis(scaled, x) == base


# -- streams -----------------------------------------------------------------

@pytest.fixture(scope="module")
def world():
    cfg = CohortConfig()
    X, y = make_training_set(cfg)
    model = GlobalModel(X, y, 10)
    abn = {c: X[np.array(y) == c] for c in "VSF"}
    return cfg, model, abn


def stream(points, pid="p", period=2.4, truth="N"):
    return [FeatureSample(np.asarray(p, dtype=float), truth, pid, i, i * period) for i, p in enumerate(points)]


def test_stream_all_abnormal_after_init(world):
    cfg, model, abn = world
    rng = np.random.default_rng(0)
    init = rng.normal(0, 0.3, (125, cfg.dim))  # 125 * 2.4 s = the 300 s init window
    later = cohort_centres(cfg)["V"] + rng.normal(0, 0.2, (50, cfg.dim))
    res = process_stream(stream(np.vstack([init, later])), model, abn)
    assert not res.skipped
    assert [lab.value for lab in res.labels] == ["Vr"] * 50
    assert all(lab.stage == "global" for lab in res.labels)


def test_stream_identical_normals(world):
    cfg, model, abn = world
    x = np.full(cfg.dim, 0.05)
    res = process_stream(stream([x] * 300), model, abn)
    assert res.labels and all(lab.value == "N" for lab in res.labels)


def test_stream_too_few_init_normals(world):
    cfg, model, abn = world
    v = cohort_centres(cfg)["V"] + np.random.default_rng(1).normal(0, 0.2, (200, cfg.dim))
    res = process_stream(stream(v), model, abn)
    assert res.skipped and res.labels == [] and "initial window" in res.diagnostic


@pytest.mark.parametrize("seed", range(5))
def test_stream_drift_gives_yellow_first(world, seed):
    # tight personal cluster, then a slide toward the V centre, then V beats
    cfg, model, abn = world
    c_v = cohort_centres(cfg)["V"]
    rng = np.random.default_rng(seed)
    pts = list(rng.normal(0, 0.1, (200, cfg.dim)))
    pts += [f * c_v + rng.normal(0, 0.1, cfg.dim) for f in np.linspace(0.05, 0.6, 12)]
    pts += list(c_v + rng.normal(0, 0.3, (5, cfg.dim)))
    for space in (IdentitySpace(abn), DeterministicSpace(abn)):
        values = [lab.value for lab in process_stream(stream(pts), model, abn, space).labels]
        assert "Vr" in values
        assert "Vy" in values[:values.index("Vr")]


def test_yellow_only_for_global_normal(world):
    cfg, model, abn = world
    samples = make_cohort(CohortConfig(n_patients=1), seed=3)[0]
    from ecg_alarm.classifier import classify_global_many

    glob = classify_global_many(model, np.array([s.x for s in samples]))
    res = process_stream(samples, model, abn, IdentitySpace(abn), global_labels=glob)
    by_index = dict(zip((s.time_index for s in samples), glob))
    for lab in res.labels:
        if lab.value.endswith("y"):
            assert by_index[lab.time_index] == "N"
        if lab.value.endswith("r"):
            assert by_index[lab.time_index] == lab.value[0]


def test_basis_space_runs(world):
    cfg, model, abn = world
    B = polynomial_basis(cfg.dim)
    space = BasisSpace(BasisTransform(B, identity_coefficients(B)), abn)
    samples = make_cohort(CohortConfig(n_patients=1), seed=4)[0]
    res = process_stream(samples, model, abn, space)
    assert len(res.labels) > 0


def test_alarm_label_stage_rules():
    with pytest.raises(ValueError):
        AlarmLabel("Vr", "personal", 0, "p")
    with pytest.raises(ValueError):
        AlarmLabel("Sy", "global", 0, "p")
    with pytest.raises(ValueError):
        AlarmLabel("Q", "global", 0, "p")


def test_alarm_csv_round_trip(tmp_path):
    labels = [AlarmLabel("N", "personal", 0, "p1", "N"), AlarmLabel("Vr", "global", 3, "p1", "V"),
              AlarmLabel("Fy", "personal", 4, "p1", "N")]
    write_alarm_csv(labels, tmp_path / "a.csv")
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "patient,time_index,stage,label,truth"
    back = read_alarm_csv(tmp_path / "a.csv")
    assert [(a.value, a.stage, a.time_index, a.truth) for a in back] == [(a.value, a.stage, a.time_index, a.truth) for a in labels]
    write_alarm_jsonl(labels, tmp_path / "a.jsonl")
    assert len((tmp_path / "a.jsonl").read_text().splitlines()) == 3
