import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ecg_alarm.features import (
    CYCLE_FEATURES,
    FEATURE_NAMES,
    N_FEATURES,
    FeatureError,
    RankDeficientError,
    apply_pca,
    extract_features,
    fit_pca,
    read_feature_csv,
    reconstruct,
    write_feature_csv,
)
from ecg_alarm.signal_prep import CardiacCycle, Segment

FS = 360.0
N_CYC = len(CYCLE_FEATURES)


def cycle(offset, q=100, s=130, p=40, t=200, r=115):
    return CardiacCycle(r=offset + r, p=offset + p, q=offset + q, s=offset + s, t=offset + t,
                        start=offset, end=offset + 300, beat_label="N", rr_prev=300 / FS,
                        r_amplitude=1.0)


def test_feature_count():
    assert N_FEATURES == 22 == len(FEATURE_NAMES)


def test_identical_cycles_zero_std():
    beat = np.sin(np.linspace(0, 6 * np.pi, 300)) * np.hanning(300)
    x = np.tile(beat, 3)
    seg = Segment([cycle(0), cycle(300), cycle(600)], "N")
    f = extract_features(seg, x, FS)
    assert np.all(np.abs(f[N_CYC:2 * N_CYC]) <= 1e-12 * np.abs(f[:N_CYC]))
    assert np.all(np.isfinite(f))


def test_qrs_duration():
    x = np.random.default_rng(0).normal(size=900)
    seg = Segment([cycle(0), cycle(300), cycle(600)], "N")
    assert extract_features(seg, x, FS)[0] == pytest.approx(30 / FS)


def test_spectral_feature_dominates():
    t = np.arange(900) / FS
    x = np.sin(2 * np.pi * 12.5 * t)
    seg = Segment([cycle(0), cycle(300), cycle(600)], "N")
    f = extract_features(seg, x, FS)
    powers = f[4:8]  # 7.5, 10, 12.5, 15 Hz
    others = np.delete(powers, 2)
    assert np.all(powers[2] >= 10 * others)


def test_missing_fiducial_imputed():
    x = np.random.default_rng(1).normal(size=900)
    c0 = cycle(0)
    c0.p = None
    seg = Segment([c0, cycle(300), cycle(600)], "N")
    f = extract_features(seg, x, FS)
    assert f[2] == pytest.approx((115 - 40) / FS)
    assert np.all(np.isfinite(f))


def test_fiducial_missing_in_all_cycles():
    x = np.zeros(900)
    cycles = [cycle(0), cycle(300), cycle(600)]
    for c in cycles:
        c.t = None
    with pytest.raises(FeatureError):
        extract_features(Segment(cycles, "N"), x, FS)


def test_pca_exact_subspace():
    rng = np.random.default_rng(0)
    X = np.zeros((200, 22))
    X[:, :8] = rng.normal(size=(200, 8)) @ rng.normal(size=(8, 8))
    model = fit_pca(X, 8)
    back = reconstruct(model, apply_pca(model, X))
    assert np.linalg.norm(back - X) / np.linalg.norm(X) < 1e-9


def test_pca_eigen_oracle():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(300, 22)) * rng.uniform(0.5, 3, 22)
    model = fit_pca(X, 8)
    Z = (X - X.mean(0)) / X.std(0, ddof=1)
    evals = np.linalg.eigh(np.cov(Z, rowvar=False))[0][::-1]
    assert np.allclose(model.explained_variance, evals[:8], atol=1e-8)
    assert np.allclose(model.components @ model.components.T, np.eye(8), atol=1e-9)
    assert np.all(np.diff(model.explained_variance) <= 0)


def test_pca_repeated_row():
    with pytest.raises(RankDeficientError):
        fit_pca(np.tile(np.arange(22.0), (50, 1)), 8)


def test_pca_mixed_splits():
    X = np.random.default_rng(2).normal(size=(40, 22))
    with pytest.raises(ValueError):
        fit_pca(X, 8, splits=["DS1"] * 39 + ["DS2"])


def test_pca_mean_maps_to_zero_and_shape():
    X = np.random.default_rng(3).normal(size=(100, 22))
    model = fit_pca(X, 8)
    assert np.allclose(apply_pca(model, X.mean(0)), 0, atol=1e-12)
    out = apply_pca(model, np.random.default_rng(4).normal(size=22))
    assert out.shape == (8,) and np.all(np.isfinite(out))


def test_reconstruction_error_bound():
    X = np.random.default_rng(5).normal(size=(200, 22))
    model = fit_pca(X, 8)
    Z = (X - model.mean) / model.scale
    total_resid = np.sum((Z - (Z @ model.components.T) @ model.components) ** 2)
    row = X[7]
    err = np.sum(((reconstruct(model, apply_pca(model, row)) - row) / model.scale) ** 2)
    assert err <= total_resid


def test_pca_json_round_trip():
    X = np.random.default_rng(6).normal(size=(60, 22))
    model = fit_pca(X, 8)
    back = type(model).from_json(model.to_json())
    assert np.array_equal(apply_pca(back, X), apply_pca(model, X))


def test_feature_csv_round_trip(tmp_path):
    rows = np.random.default_rng(7).normal(size=(4, 22))
    meta = [("100", i, i * 2.5, "N") for i in range(4)]
    write_feature_csv(tmp_path / "f.csv", rows, meta)
    back, back_meta = read_feature_csv(tmp_path / "f.csv")
    assert np.array_equal(back, rows) and back_meta == meta


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (30, 22), elements=st.floats(-1e3, 1e3)))
def test_pca_orthonormal_property(X):
    try:
        model = fit_pca(X, 8)
    except RankDeficientError:
        return
    assert np.allclose(model.components @ model.components.T, np.eye(8), atol=1e-9)
    assert np.all(np.diff(model.explained_variance) <= 1e-9 * model.explained_variance[0])
