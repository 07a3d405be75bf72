"""Denoising, annotation-anchored delineation and beat segmentation."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pywt

from .wfdb_io import BeatAnnotation

log = logging.getLogger(__name__)

DISCARD = "Discard"


class SignalTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class DenoiseConfig:
    wavelet: str = "db4"
    levels: int = 9
    # detail levels kept; at 360 Hz level j spans fs/2^(j+1)..fs/2^j
    keep_details: tuple[int, ...] = (3, 4, 5, 6, 7, 8)


def denoise(signal: np.ndarray, sampling_rate: float, config: DenoiseConfig = DenoiseConfig()) -> np.ndarray:
    """Zero-phase wavelet band-pass.

    A stationary (undecimated) Daubechies decomposition is reconstructed from
    the selected detail levels only; the approximation (baseline wander, DC)
    and the finest details (EMG, mains) are dropped.
    """
    if sampling_rate <= 0:
        raise ValueError("sampling_rate must be positive")
    x = np.asarray(signal, dtype=float)
    wavelet = pywt.Wavelet(config.wavelet)
    if len(x) < 2 * wavelet.dec_len:
        raise SignalTooShortError(
            f"signal of {len(x)} samples is shorter than the minimum {2 * wavelet.dec_len}"
        )
    block = 2 ** config.levels
    total = int(np.ceil(len(x) / block)) * block
    left = (total - len(x)) // 2
    padded = np.pad(x, (left, total - len(x) - left), mode="symmetric")

    coeffs = pywt.swt(padded, wavelet, level=config.levels, trim_approx=True, norm=True)
    # coeffs = [cA_n, cD_n, ..., cD_1]
    kept = [np.zeros_like(coeffs[0])]
    for pos, detail in enumerate(coeffs[1:]):
        level = config.levels - pos
        kept.append(detail if level in config.keep_details else np.zeros_like(detail))
    out = pywt.iswt(kept, wavelet, norm=True)
    return out[left:left + len(x)]


# --------------------------------------------------------------------------
# Delineation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DelineationConfig:
    r_refine_ms: float = 25.0
    qs_window_ms: float = 60.0
    p_window_ms: tuple[float, float] = (200.0, 60.0)  # search in [R-200, R-60]
    t_window_ms: tuple[float, float] = (80.0, 400.0)  # search in [R+80, R+400]
    min_rr_ms: float = 120.0
    min_window_fraction: float = 0.5


@dataclass
class CardiacCycle:
    """One beat: fiducial sample indices (``None`` when absent) and its window."""

    r: int
    p: int | None
    q: int | None
    s: int | None
    t: int | None
    start: int
    end: int
    beat_label: str
    symbol: str = ""
    rr_prev: float | None = None  # seconds
    r_amplitude: float = 0.0

    @property
    def fiducials(self) -> dict[str, int | None]:
        return {"P": self.p, "Q": self.q, "R": self.r, "S": self.s, "T": self.t}


def _ms(ms: float, fs: float) -> int:
    return int(round(ms * fs / 1000.0))


def delineate(
    signal: np.ndarray,
    sampling_rate: float,
    annotations: list[BeatAnnotation],
    config: DelineationConfig = DelineationConfig(),
) -> list[CardiacCycle]:
    """Locate P, Q, R, S, T for every annotated beat.

    R comes from the annotation (refined to the largest absolute deflection
    nearby); the other peaks are windowed extrema around it.  Search windows
    stop at the record ends and at the neighbouring beats.
    """
    x = np.asarray(signal, dtype=float)
    fs = sampling_rate
    n = len(x)
    min_rr = _ms(config.min_rr_ms, fs)

    kept: list[BeatAnnotation] = []
    for ann in annotations:
        if kept and ann.sample_index - kept[-1].sample_index < min_rr:
            log.warning("beat at sample %d closer than %g ms to previous, skipped",
                        ann.sample_index, config.min_rr_ms)
            continue
        kept.append(ann)

    refine = _ms(config.r_refine_ms, fs)
    r_peaks = []
    for ann in kept:
        lo, hi = max(0, ann.sample_index - refine), min(n, ann.sample_index + refine + 1)
        r_peaks.append(lo + int(np.argmax(np.abs(x[lo:hi]))) if hi > lo else ann.sample_index)

    qs = _ms(config.qs_window_ms, fs)
    p_lo_off, p_hi_off = (_ms(v, fs) for v in config.p_window_ms)
    t_lo_off, t_hi_off = (_ms(v, fs) for v in config.t_window_ms)
    cycles = []
    for i, (ann, r) in enumerate(zip(kept, r_peaks)):
        prev_r = r_peaks[i - 1] if i > 0 else None
        next_r = r_peaks[i + 1] if i + 1 < len(r_peaks) else None
        lower_bound = 0 if prev_r is None else prev_r + 1
        upper_bound = n if next_r is None else next_r

        q = _extremum(x, max(lower_bound, r - qs), r, np.argmin)
        s = _extremum(x, r + 1, min(upper_bound, r + qs + 1), np.argmin)
        p = _windowed(x, r - p_lo_off, r - p_hi_off + 1, lower_bound, upper_bound,
                      config.min_window_fraction, np.argmax)
        t = _windowed(x, r + t_lo_off, r + t_hi_off + 1, lower_bound, upper_bound,
                      config.min_window_fraction, lambda seg: np.argmax(np.abs(seg)))
        if p is not None and q is not None and p > q:
            p = None
        if t is not None and s is not None and t < s:
            t = None

        start = 0 if prev_r is None else (prev_r + r) // 2
        end = n if next_r is None else (r + next_r) // 2
        if prev_r is None:
            start = max(0, r - _ms(250, fs))
        if next_r is None:
            end = min(n, r + _ms(400, fs))
        rr_prev = (r - prev_r) / fs if prev_r is not None else (
            (next_r - r) / fs if next_r is not None else None)
        cycles.append(CardiacCycle(
            r=r, p=p, q=q, s=s, t=t, start=start, end=end,
            beat_label=ann.aami_class, symbol=ann.symbol,
            rr_prev=rr_prev, r_amplitude=float(x[r]),
        ))
    return cycles


def _extremum(x, lo, hi, pick) -> int | None:
    lo, hi = max(lo, 0), min(hi, len(x))
    if hi <= lo:
        return None
    return lo + int(pick(x[lo:hi]))


def _windowed(x, lo, hi, lower_bound, upper_bound, min_fraction, pick) -> int | None:
    nominal = hi - lo
    clo, chi = max(lo, lower_bound, 0), min(hi, upper_bound, len(x))
    if chi - clo < min_fraction * nominal:
        return None
    return clo + int(pick(x[clo:chi]))


# --------------------------------------------------------------------------
# Segmentation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SegmentationConfig:
    s_w: int = 3
    n_s: int = 3

    def __post_init__(self):
        if not (1 <= self.n_s <= self.s_w):
            raise ValueError("segmentation requires 1 <= n_s <= s_w")


@dataclass
class Segment:
    cycles: list[CardiacCycle]
    label: str
    patient_id: str = ""
    segment_index: int = 0

    @property
    def start(self) -> int:
        return self.cycles[0].start

    @property
    def end(self) -> int:
        return self.cycles[-1].end

    @property
    def r_sample(self) -> int:
        return self.cycles[-1].r

    @property
    def discarded(self) -> bool:
        return self.label == DISCARD


def integrate_labels(labels) -> str:
    """Segment label from member beat classes: all N -> N, one abnormal type -> it."""
    labels = list(labels)
    if "Q" in labels:
        return DISCARD
    abnormal = {lab for lab in labels if lab != "N"}
    if not abnormal:
        return "N"
    if len(abnormal) == 1:
        return abnormal.pop()
    return DISCARD


def segment(
    cycles: list[CardiacCycle],
    config: SegmentationConfig = SegmentationConfig(),
    patient_id: str = "",
) -> list[Segment]:
    """Group cycles ``s_w`` at a time, stepping ``n_s``; a short tail is dropped."""
    out = []
    for k, offset in enumerate(range(0, len(cycles) - config.s_w + 1, config.n_s)):
        members = cycles[offset:offset + config.s_w]
        out.append(Segment(members, integrate_labels(c.beat_label for c in members), patient_id, k))
    return out


def dump_fiducials_csv(segments: list[Segment], path: str | Path) -> None:
    """Debug dump, one row per beat: ``segment_index,beat,P,Q,R,S,T``."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["segment_index", "beat", "P", "Q", "R", "S", "T"])
        for seg in segments:
            for b, cyc in enumerate(seg.cycles):
                writer.writerow([seg.segment_index, b] + [
                    "" if v is None else v for v in cyc.fiducials.values()
                ])
