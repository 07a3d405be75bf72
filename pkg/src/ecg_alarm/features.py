"""Per-segment feature extraction (22 values) and PCA down to 8 dimensions."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import argrelmax, periodogram

from .signal_prep import CardiacCycle, Segment

SPECTRAL_FREQS = (7.5, 10.0, 12.5, 15.0)
CYCLE_FEATURES = (
    "qrs_duration", "qt_duration", "pr_duration", "peak_ratio",
    "power_7_5hz", "power_10hz", "power_12_5hz", "power_15hz",
)
SEGMENT_FEATURES = (
    "mean_rr", "mean_r_drift", "avg_energy", "max_pos_peak", "max_neg_peak", "peak_energy_ratio",
)
FEATURE_NAMES = tuple(
    [f"{name}_mean" for name in CYCLE_FEATURES]
    + [f"{name}_std" for name in CYCLE_FEATURES]
    + list(SEGMENT_FEATURES)
)
N_FEATURES = len(FEATURE_NAMES)  # 8 * 2 + 6


class FeatureError(ValueError):
    pass


@dataclass
class FeatureSample:
    x: np.ndarray
    true_label: str
    patient_id: str
    time_index: int
    timestamp_s: float


def _cycle_values(cycle: CardiacCycle, x: np.ndarray, fs: float, nfft: int) -> np.ndarray:
    vals = np.full(len(CYCLE_FEATURES), np.nan)
    if cycle.q is not None and cycle.s is not None:
        vals[0] = (cycle.s - cycle.q) / fs
    if cycle.q is not None and cycle.t is not None:
        vals[1] = (cycle.t - cycle.q) / fs
    if cycle.p is not None:
        vals[2] = (cycle.r - cycle.p) / fs

    window = x[cycle.start:cycle.end]
    if len(window) >= 3:
        peaks = argrelmax(window)[0]
        heights = np.sort(window[peaks][window[peaks] > 0])[::-1]
        if len(heights) >= 2:
            vals[3] = heights[0] / heights[1]
        freqs, power = periodogram(window, fs=fs, nfft=nfft, detrend="constant", scaling="spectrum")
        for j, f0 in enumerate(SPECTRAL_FREQS):
            vals[4 + j] = power[int(np.argmin(np.abs(freqs - f0)))]
    return vals


def extract_features(
    segment: Segment,
    denoised_signal: np.ndarray,
    sampling_rate: float,
    r_avg: float | None = None,
) -> np.ndarray:
    """The 22-value raw feature vector of one segment, ordered as FEATURE_NAMES.

    ``r_avg`` is the record-wide mean R amplitude; it defaults to the mean over
    this segment, which makes the drift feature zero.
    """
    x = np.asarray(denoised_signal, dtype=float)
    fs = sampling_rate
    nfft = int(round(2 * fs))  # 0.5 Hz bins hit all four spectral frequencies
    per_cycle = np.array([_cycle_values(c, x, fs, nfft) for c in segment.cycles])

    missing = np.isnan(per_cycle)
    if missing.all(axis=0).any():
        names = [CYCLE_FEATURES[j] for j in np.flatnonzero(missing.all(axis=0))]
        raise FeatureError(f"segment {segment.segment_index}: no cycle yields {', '.join(names)}")
    if missing.any():
        col_means = np.nanmean(per_cycle, axis=0)
        per_cycle = np.where(missing, col_means, per_cycle)

    window = x[segment.start:segment.end]
    r_amps = np.array([c.r_amplitude for c in segment.cycles])
    rr = [c.rr_prev for c in segment.cycles if c.rr_prev is not None]
    energy = float(np.mean(window ** 2)) if len(window) else 0.0
    max_pos = float(window.max()) if len(window) else 0.0
    max_neg = float(window.min()) if len(window) else 0.0
    seg_vals = np.array([
        float(np.mean(rr)) if rr else 0.0,
        float(np.mean(r_amps - (r_amps.mean() if r_avg is None else r_avg))),
        energy,
        max_pos,
        max_neg,
        max_pos / energy if energy > 0 else 0.0,
    ])
    return np.concatenate([per_cycle.mean(axis=0), per_cycle.std(axis=0), seg_vals])


# --------------------------------------------------------------------------
# PCA
# --------------------------------------------------------------------------

class RankDeficientError(ValueError):
    pass


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    scale: np.ndarray
    components: np.ndarray  # (k, p), orthonormal rows
    explained_variance: np.ndarray

    @property
    def dim(self) -> int:
        return self.components.shape[0]

    def to_json(self) -> str:
        return json.dumps({
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PcaModel":
        doc = json.loads(text)
        return cls(
            np.asarray(doc["mean"], dtype=float),
            np.asarray(doc["scale"], dtype=float),
            np.asarray(doc["components"], dtype=float),
            np.asarray(doc["explained_variance"], dtype=float),
        )


def fit_pca(training: np.ndarray, target_dim: int = 8, splits=None, rank_tol: float = 1e-10) -> PcaModel:
    """Fit PCA on z-scored rows.

    If ``splits`` (one tag per row) is given, every row must carry the same
    training tag; fitting on a mix would leak test data into the model.
    """
    X = np.asarray(training, dtype=float)
    if splits is not None:
        tags = set(splits)
        if len(tags) > 1:
            raise ValueError(f"refusing to fit PCA on mixed splits {sorted(tags)}")
    n, p = X.shape
    if n < target_dim + 1:
        raise RankDeficientError(f"need at least {target_dim + 1} rows, got {n}")
    mean = X.mean(axis=0)
    scale = X.std(axis=0, ddof=1)
    scale = np.where(scale > 0, scale, 1.0)
    Z = (X - mean) / scale

    _, sing, vt = np.linalg.svd(Z, full_matrices=False)
    rank = int(np.sum(sing > rank_tol * max(sing[0], 1e-300))) if sing.size else 0
    if rank < target_dim:
        raise RankDeficientError(f"feature matrix has rank {rank} < {target_dim}")
    comps = vt[:target_dim]
    # fix the sign so the largest-magnitude loading is positive
    flip = np.sign(comps[np.arange(target_dim), np.argmax(np.abs(comps), axis=1)])
    comps = comps * flip[:, None]
    return PcaModel(mean, scale, comps, sing[:target_dim] ** 2 / (n - 1))


def standardize(model: PcaModel, raw: np.ndarray) -> np.ndarray:
    return (np.asarray(raw, dtype=float) - model.mean) / model.scale


def apply_pca(model: PcaModel, raw: np.ndarray) -> np.ndarray:
    """Project one vector or a matrix of rows into the reduced space."""
    return standardize(model, raw) @ model.components.T


def reconstruct(model: PcaModel, reduced: np.ndarray) -> np.ndarray:
    return np.asarray(reduced) @ model.components * model.scale + model.mean


# --------------------------------------------------------------------------
# CSV exchange
# --------------------------------------------------------------------------

META_COLUMNS = ("patient_id", "segment_index", "timestamp_s", "label")


def write_feature_csv(path: str | Path, rows: np.ndarray, meta: list[tuple]) -> None:
    """Feature matrix with a header of the canonical names; ``meta`` rows hold
    (patient_id, segment_index, timestamp_s, label)."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(META_COLUMNS) + list(FEATURE_NAMES))
        for m, row in zip(meta, np.asarray(rows).reshape(-1, N_FEATURES)):
            writer.writerow(list(m) + [repr(float(v)) for v in row])


def read_feature_csv(path: str | Path) -> tuple[np.ndarray, list[tuple]]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[len(META_COLUMNS):]) != FEATURE_NAMES:
            raise FeatureError(f"{path}: unexpected feature columns")
        meta, rows = [], []
        for rec in reader:
            meta.append((rec[0], int(rec[1]), float(rec[2]), rec[3]))
            rows.append([float(v) for v in rec[len(META_COLUMNS):]])
    return np.asarray(rows, dtype=float).reshape(-1, N_FEATURES), meta
