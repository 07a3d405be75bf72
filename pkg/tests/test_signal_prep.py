import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ecg_alarm.signal_prep import (
    DISCARD,
    SegmentationConfig,
    SignalTooShortError,
    delineate,
    denoise,
    integrate_labels,
    segment,
)
from ecg_alarm.synthetic import make_record
from ecg_alarm.wfdb_io import BeatAnnotation, map_symbol_to_aami

FS = 360.0


def band_power(x, fs, f0, half_width=0.5):
    spec = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(len(x), 1 / fs)
    return spec[np.abs(freqs - f0) <= half_width].sum()


def test_dc_removed():
    out = denoise(np.full(4000, 3.0), FS)
    assert np.max(np.abs(out)) < 1e-6 * 3.0


def test_passband_sinusoid_kept():
    t = np.arange(20 * int(FS)) / FS
    x = np.sin(2 * np.pi * 10 * t)
    out = denoise(x, FS)
    inner = slice(1000, -1000)
    assert np.sum(out[inner] ** 2) >= 0.9 * np.sum(x[inner] ** 2)


def test_drift_attenuated():
    t = np.arange(60 * int(FS)) / FS
    drift = 2.0 * np.sin(2 * np.pi * 0.2 * t)
    out = denoise(np.sin(2 * np.pi * 10 * t) + drift, FS)
    ratio = band_power(out, FS, 0.2, 0.05) / band_power(drift, FS, 0.2, 0.05)
    assert 10 * np.log10(ratio) <= -20


def test_short_signal():
    with pytest.raises(SignalTooShortError):
        denoise(np.zeros(5), FS)


def _annotations(rec):
    return [BeatAnnotation(s, sym, map_symbol_to_aami(sym)) for s, sym in rec.beats]


def test_fiducials_on_clean_template():
    rec = make_record(duration_s=30, seed=1, class_probs={"N": 1.0}, clean=True)
    cycles = delineate(rec.signal, rec.fs, _annotations(rec))
    assert len(cycles) == len(rec.beats)
    for cyc, truth in zip(cycles[1:-1], rec.fiducials[1:-1]):
        for wave, got in cyc.fiducials.items():
            assert got is not None and abs(got - truth[wave]) <= 2, (wave, got, truth[wave])


def test_fiducial_order():
    rec = make_record(duration_s=60, seed=2)
    for cyc in delineate(denoise(rec.signal, rec.fs), rec.fs, _annotations(rec)):
        present = [v for v in (cyc.p, cyc.q, cyc.r, cyc.s, cyc.t) if v is not None]
        assert present == sorted(present)


def test_truncated_p_window_at_edge():
    rec = make_record(duration_s=10, seed=0, class_probs={"N": 1.0}, clean=True)
    first = rec.beats[0][0]
    sig = rec.signal[first - 20:]  # P region of the first beat cut off
    ann = [BeatAnnotation(s - (first - 20), "N", "N") for s, _ in rec.beats]
    cycles = delineate(sig, rec.fs, ann)
    assert cycles[0].p is None
    assert len(cycles) == len(ann)


def test_ten_beats_ten_cycles():
    rec = make_record(duration_s=60, seed=4, class_probs={"N": 1.0})
    ann = _annotations(rec)[:10]
    assert len(delineate(rec.signal, rec.fs, ann)) == 10


@pytest.mark.parametrize("beats,label", [("NNN", "N"), ("VNV", "V"), ("SSS", "S"), ("NSV", DISCARD), ("NQN", DISCARD)])
def test_integrated_label(beats, label):
    assert integrate_labels(beats) == label


def test_ten_cycles_three_segments():
    rec = make_record(duration_s=60, seed=4, class_probs={"N": 1.0})
    cycles = delineate(rec.signal, rec.fs, _annotations(rec)[:10])
    segs = segment(cycles, SegmentationConfig(3, 3))
    assert len(segs) == 3
    assert all(len(s.cycles) == 3 for s in segs)
    assert segs[-1].cycles[-1] is cycles[8]


def test_segmentation_config_bounds():
    with pytest.raises(ValueError):
        SegmentationConfig(3, 4)
    with pytest.raises(ValueError):
        SegmentationConfig(3, 0)


@given(st.text(alphabet="NVSF", min_size=1, max_size=8))
def test_integrate_labels_property(labels):
    out = integrate_labels(labels)
    abnormal = set(labels) - {"N"}
    if out == "N":
        assert not abnormal
    elif out == DISCARD:
        assert len(abnormal) > 1
    else:
        assert abnormal == {out}


@given(st.integers(0, 40), st.integers(1, 5), st.integers(1, 5))
def test_segment_count_property(n, s_w, n_s):
    if n_s > s_w:
        return
    rec = make_record(duration_s=40, seed=0, class_probs={"N": 1.0}, clean=True)
    cycles = delineate(rec.signal, rec.fs, _annotations(rec))[:n]
    segs = segment(cycles, SegmentationConfig(s_w, n_s))
    expected = 0 if len(cycles) < s_w else (len(cycles) - s_w) // n_s + 1
    assert len(segs) == expected
