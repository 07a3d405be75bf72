"""Synthetic data: ECG-like records and feature-space patient cohorts.

Neither generator attempts physiological realism.  Records give the signal
pipeline beats with known fiducials and class-dependent morphology; cohorts
give the classifier streams where a gradual drift toward an abnormal cluster
precedes abnormal samples of that type.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import FeatureSample

# (offset s, amplitude mV, width s) per wave; P..T order.  None = wave absent.
TEMPLATES: dict[str, dict[str, tuple[float, float, float] | None]] = {
    "N": {"P": (-0.16, 0.15, 0.020), "Q": (-0.03, -0.12, 0.008), "R": (0.0, 1.0, 0.010),
          "S": (0.03, -0.25, 0.009), "T": (0.26, 0.30, 0.040)},
    "V": {"P": None, "Q": (-0.05, -0.10, 0.012), "R": (0.0, 1.5, 0.022),
          "S": (0.055, -0.55, 0.018), "T": (0.30, -0.45, 0.055)},
    "S": {"P": (-0.13, -0.10, 0.018), "Q": (-0.03, -0.10, 0.008), "R": (0.0, 0.9, 0.010),
          "S": (0.03, -0.20, 0.009), "T": (0.24, 0.25, 0.035)},
    "F": {"P": (-0.16, 0.06, 0.020), "Q": (-0.04, -0.12, 0.010), "R": (0.0, 1.25, 0.016),
          "S": (0.045, -0.40, 0.014), "T": (0.28, -0.05, 0.045)},
}
SYMBOL_FOR = {"N": "N", "V": "V", "S": "A", "F": "F"}
RR_FACTOR = {"N": 1.0, "V": 0.72, "S": 0.70, "F": 0.85}


@dataclass
class SyntheticRecord:
    signal: np.ndarray  # mV
    fs: float
    beats: list[tuple[int, str]]  # (R sample, MIT symbol)
    classes: list[str]
    fiducials: list[dict[str, int | None]]


def beat_waveform(t: np.ndarray, cls: str, morph: float = 0.0, toward: str | None = None) -> np.ndarray:
    """Sum of Gaussian waves for one beat; ``morph`` in [0, 1] blends toward
    the template of class ``toward``."""
    out = np.zeros_like(t)
    for wave, spec in TEMPLATES[cls].items():
        if toward is not None and morph > 0:
            other = TEMPLATES[toward][wave]
            spec = _blend(spec, other, morph)
        if spec is None:
            continue
        off, amp, width = spec
        out += amp * np.exp(-0.5 * ((t - off) / width) ** 2)
    return out


def _blend(a, b, w):
    if a is None and b is None:
        return None
    a = a or (b[0], 0.0, b[2])
    b = b or (a[0], 0.0, a[2])
    return tuple((1 - w) * x + w * y for x, y in zip(a, b))


def make_record(
    duration_s: float = 420.0,
    fs: float = 360.0,
    seed: int = 0,
    class_probs: dict[str, float] | None = None,
    heart_rate: float = 72.0,
    noise_mv: float = 0.01,
    wander_mv: float = 0.1,
    clean: bool = False,
    onset_s: float = 0.0,
) -> SyntheticRecord:
    """One synthetic lead with annotated beats.

    Abnormal beats appear only after ``onset_s``; ``clean=True`` removes noise
    and baseline wander (for fiducial checks).
    """
    rng = np.random.default_rng(seed)
    class_probs = class_probs or {"N": 0.85, "V": 0.08, "S": 0.05, "F": 0.02}
    names = list(class_probs)
    probs = np.array([class_probs[c] for c in names], dtype=float)
    probs /= probs.sum()
    n = int(duration_s * fs)
    t_axis = np.arange(n) / fs
    sig = np.zeros(n)
    rr0 = 60.0 / heart_rate
    beats, classes, fids = [], [], []
    t = 0.4
    half = int(0.45 * fs)
    local = np.arange(-half, half + 1) / fs
    while t < duration_s - 0.6:
        cls = names[rng.choice(len(names), p=probs)] if t >= onset_s else "N"
        r = int(round(t * fs))
        amp_jitter = 1.0 + 0.03 * rng.standard_normal()
        wave = beat_waveform(local, cls) * amp_jitter
        lo, hi = r - half, r + half + 1
        a, b = max(lo, 0), min(hi, n)
        sig[a:b] += wave[a - lo:b - lo]
        beats.append((r, SYMBOL_FOR[cls]))
        classes.append(cls)
        fids.append({w: None if spec is None else r + int(round(spec[0] * fs))
                     for w, spec in TEMPLATES[cls].items()})
        t += rr0 * RR_FACTOR[cls] * (1.0 + 0.03 * rng.standard_normal())
        if cls != "N":
            t += rr0 * 0.25  # compensatory pause
    if not clean:
        sig += wander_mv * np.sin(2 * np.pi * 0.3 * t_axis + rng.uniform(0, 2 * np.pi))
        sig += noise_mv * rng.standard_normal(n)
    return SyntheticRecord(sig, fs, beats, classes, fids)


# --------------------------------------------------------------------------
# Feature-space cohort
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CohortConfig:
    dim: int = 8
    n_patients: int = 12
    samples_per_patient: int = 600
    sample_period_s: float = 2.4  # one segment of three beats
    init_s: float = 300.0
    abnormal_centres: float = 4.0  # distance of abnormal centres from the origin
    cluster_sd: float = 0.5
    patient_sd: float = 0.6  # spread of patient-specific normal centres
    drift_len: int = 8
    episode_len: int = 3
    episodes: int = 12
    drift_reach: float = 0.6  # fraction of the way to the abnormal centre
    class_weights: tuple[float, float, float] = (0.55, 0.3, 0.15)  # V, S, F


def cohort_centres(config: CohortConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.normal(size=(config.dim, 3)))
    return {c: config.abnormal_centres * Q[:, j] for j, c in enumerate("VSF")}


def make_training_set(config: CohortConfig = CohortConfig(), seed: int = 0, n_normal: int = 1500,
                      n_abnormal: int = 400) -> tuple[np.ndarray, list[str]]:
    """Pooled labelled samples standing in for the training split."""
    rng = np.random.default_rng(seed + 1)
    centres = cohort_centres(config, seed)
    X = [rng.normal(0, config.patient_sd, (n_normal, config.dim))
         + rng.normal(0, config.cluster_sd, (n_normal, config.dim))]
    y = ["N"] * n_normal
    for c in "VSF":
        X.append(centres[c] + rng.normal(0, config.cluster_sd * 1.6, (n_abnormal, config.dim)))
        y += [c] * n_abnormal
    return np.vstack(X), y


def make_cohort(config: CohortConfig = CohortConfig(), seed: int = 100,
                centre_seed: int = 0) -> list[list[FeatureSample]]:
    """Patient streams in which each abnormal episode of type X is preceded by
    ``drift_len`` normal-labelled samples sliding from the patient's normal
    centre toward the X cluster, ending ``drift_reach`` of the way there."""
    rng = np.random.default_rng(seed)
    centres = cohort_centres(config, centre_seed)
    weights = np.asarray(config.class_weights, dtype=float)
    weights /= weights.sum()
    init_n = int(np.ceil(config.init_s / config.sample_period_s))
    cohort = []
    for p in range(config.n_patients):
        pid = f"p{p:02d}"
        home = rng.normal(0, config.patient_sd, config.dim)
        n = config.samples_per_patient
        truth = ["N"] * n
        morph = np.zeros(n)
        target = [None] * n
        span = config.drift_len + config.episode_len
        starts = np.sort(rng.choice(np.arange(init_n + 5, n - span - 1, span + 5),
                                    size=config.episodes, replace=False))
        for s in starts:
            cls = "VSF"[rng.choice(3, p=weights)]
            for j in range(config.drift_len):
                morph[s + j] = (j + 1) / config.drift_len * config.drift_reach
                target[s + j] = cls
            for j in range(config.episode_len):
                truth[s + config.drift_len + j] = cls
        stream = []
        for i in range(n):
            if truth[i] == "N":
                base = home if target[i] is None else (1 - morph[i]) * home + morph[i] * centres[target[i]]
                x = base + rng.normal(0, config.cluster_sd, config.dim)
            else:
                x = centres[truth[i]] + rng.normal(0, config.cluster_sd * 1.6, config.dim)
            stream.append(FeatureSample(x, truth[i], pid, i, i * config.sample_period_s))
        cohort.append(stream)
    return cohort
