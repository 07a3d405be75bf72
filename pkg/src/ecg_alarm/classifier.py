"""Two-stage alarm classification.

Stage one is a global kNN over the whole training set; its abnormal outputs
are red alarms.  Samples it calls normal go to a per-patient stage that keeps
a sliding five-minute cluster of the patient's own confirmed-normal samples.
A sample that stays inside that cluster (by diameter and by median distance)
is normal; otherwise the direction in which it leaves the cluster, measured
in a transformed space, names a yellow alarm.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .features import FeatureSample
from .geometry import (
    DegenerateGeometryError,
    apply_transform,
    build_frame,
    build_transform,
    cosine_distance,
)
from .swarm import BasisTransform

log = logging.getLogger(__name__)

CLASSES = ("N", "V", "S", "F")
ABNORMAL = ("V", "S", "F")
ALARM_VALUES = ("N", "Vy", "Sy", "Fy", "Vr", "Sr", "Fr")


class NotInitializedError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Global stage
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GlobalModel:
    points: np.ndarray
    labels: tuple[str, ...]
    k: int = 10

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) != len(pts):
            raise ValueError("one label per training point required")
        if len(pts) == 0:
            raise ValueError("global model needs training points")
        if not 1 <= self.k <= len(pts):
            raise ValueError(f"k={self.k} must lie in [1, {len(pts)}]")
        bad = set(self.labels) - set(CLASSES)
        if bad:
            raise ValueError(f"unknown training labels {sorted(bad)}")

    def to_dict(self) -> dict:
        return {"k": self.k, "labels": list(self.labels), "points": self.points.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "GlobalModel":
        return cls(np.asarray(doc["points"], dtype=float), tuple(doc["labels"]), int(doc["k"]))


def classify_global(model: GlobalModel, x: np.ndarray) -> str:
    """Majority vote of the k nearest training points.

    Neighbours are ordered by (distance, training index).  Vote ties go to
    the class with the smaller summed distance, then to the order N, V, S, F.
    """
    dist = np.sqrt(np.sum((model.points - np.asarray(x, dtype=float)) ** 2, axis=1))
    nearest = np.argsort(dist, kind="stable")[:model.k]
    votes = {c: [0, 0.0] for c in CLASSES}
    for i in nearest:
        v = votes[model.labels[i]]
        v[0] += 1
        v[1] += float(dist[i])
    return min(CLASSES, key=lambda c: (-votes[c][0], votes[c][1], CLASSES.index(c)))


def classify_global_many(model: GlobalModel, X: np.ndarray) -> list[str]:
    return [classify_global(model, x) for x in np.atleast_2d(X)]


# --------------------------------------------------------------------------
# Personal normal cluster
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PersonalConfig:
    alpha: float = 1.25
    init_window_s: float = 300.0
    window_s: float = 300.0
    refresh_every: int = 256

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.window_s <= 0 or self.init_window_s <= 0:
            raise ValueError("windows must be positive")


def _diameter(P: np.ndarray) -> float:
    if len(P) < 2:
        return 0.0
    G = P @ P.T
    sq = np.diag(G)[:, None] + np.diag(G)[None, :] - 2 * G
    return float(np.sqrt(max(sq.max(), 0.0)))


class PersonalNormalCluster:
    """Sliding window of confirmed-normal samples with cached centroid and diameter."""

    def __init__(self, patient_id: str = "", window_s: float = 300.0, refresh_every: int = 256):
        self.patient_id = patient_id
        self.window_s = window_s
        self.refresh_every = refresh_every
        self._times: deque[float] = deque()
        self._points: deque[np.ndarray] = deque()
        self._sum: np.ndarray | None = None
        self._r_max = 0.0
        self._updates = 0
        self.version = 0

    def __len__(self) -> int:
        return len(self._points)

    @property
    def points(self) -> np.ndarray:
        return np.array(self._points)

    @property
    def times(self) -> np.ndarray:
        return np.array(self._times)

    @property
    def centroid(self) -> np.ndarray:
        if not self._points:
            raise NotInitializedError(f"patient {self.patient_id}: empty normal cluster")
        return self._sum / len(self._points)

    @property
    def r_max(self) -> float:
        return self._r_max

    def add(self, x: np.ndarray, timestamp_s: float) -> None:
        x = np.asarray(x, dtype=float)
        if self._times and timestamp_s < self._times[-1]:
            raise ValueError("cluster updates must be time-ordered")
        if self._points:
            far = float(np.max(np.sqrt(np.sum((self.points - x) ** 2, axis=1))))
            self._r_max = max(self._r_max, far)
            self._sum = self._sum + x
        else:
            self._sum = x.copy()
        self._points.append(x)
        self._times.append(float(timestamp_s))
        evicted = False
        while self._times[0] < timestamp_s - self.window_s:
            self._times.popleft()
            self._sum = self._sum - self._points.popleft()
            evicted = True
        self._updates += 1
        if self._updates % self.refresh_every == 0:
            self._sum = np.sum(self.points, axis=0)
        if evicted:
            self._r_max = _diameter(self.points)
        self.version += 1


# --------------------------------------------------------------------------
# Deviation metrics
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DeviationMetrics:
    r_max: float
    d_n_max: float
    d_x: dict[str, float]
    d_n: float


def compute_deviation_metrics(
    normal_points: np.ndarray,
    abnormal_clusters: dict[str, np.ndarray],
    x: np.ndarray,
    r_max: float | None = None,
) -> DeviationMetrics:
    """Largest and median distances from ``x`` to the normal cluster, and the
    median distance to every abnormal cluster."""
    P = np.atleast_2d(np.asarray(normal_points, dtype=float))
    if P.size == 0 or len(P) == 0:
        raise NotInitializedError("normal cluster is empty")
    x = np.asarray(x, dtype=float)
    dn = np.sqrt(np.sum((P - x) ** 2, axis=1))
    d_x = {}
    for c, pts in abnormal_clusters.items():
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if len(pts) == 0:
            raise ValueError(f"abnormal cluster {c} is empty")
        d_x[c] = float(np.median(np.sqrt(np.sum((pts - x) ** 2, axis=1))))
    return DeviationMetrics(
        r_max=_diameter(P) if r_max is None else float(r_max),
        d_n_max=float(dn.max()),
        d_x=d_x,
        d_n=float(np.median(dn)),
    )


def confirm_normal(metrics: DeviationMetrics, config: PersonalConfig = PersonalConfig()) -> bool:
    if metrics.d_n_max > config.alpha * metrics.r_max:
        return False
    return all(metrics.d_n < d for d in metrics.d_x.values())


# --------------------------------------------------------------------------
# Deviation spaces: where the direction of departure is measured
# --------------------------------------------------------------------------

@dataclass
class DeviationFrame:
    """A transform and the transformed normal and abnormal centroids."""

    transform: Callable[[np.ndarray], np.ndarray]
    c_n: np.ndarray
    c_x: dict[str, np.ndarray]


class IdentitySpace:
    name = "none"

    def __init__(self, abnormal_clusters: dict[str, np.ndarray]):
        self.c_x = {c: np.mean(np.atleast_2d(p), axis=0) for c, p in abnormal_clusters.items()}

    def frame(self, cluster: PersonalNormalCluster) -> DeviationFrame:
        return DeviationFrame(lambda X: np.asarray(X, dtype=float), cluster.centroid, self.c_x)


class DeterministicSpace:
    """The angle-and-radius transform rebuilt around the personal centroid."""

    def __init__(self, abnormal_clusters: dict[str, np.ndarray], variant: str = "logit",
                 alpha_g: float = 1.0, seed: int = 0, n_candidates: int = 1024):
        self.name = f"deterministic-{variant}"
        self.centroids = {c: np.mean(np.atleast_2d(p), axis=0) for c, p in abnormal_clusters.items()}
        self.variant, self.alpha_g, self.seed, self.n_candidates = variant, alpha_g, seed, n_candidates
        self._identity = IdentitySpace(abnormal_clusters)

    def build(self, c_n: np.ndarray):
        return build_transform(build_frame(c_n, self.centroids), self.variant, self.alpha_g,
                               seed=self.seed, n_candidates=self.n_candidates)

    def frame(self, cluster: PersonalNormalCluster) -> DeviationFrame:
        try:
            T = self.build(cluster.centroid)
        except DegenerateGeometryError as exc:
            log.warning("patient %s: %s; deviation measured untransformed", cluster.patient_id, exc)
            return self._identity.frame(cluster)
        c_x = {c: apply_transform(T, v) for c, v in self.centroids.items()}
        return DeviationFrame(lambda X: apply_transform(T, X), apply_transform(T, cluster.centroid), c_x)


class BasisSpace:
    """Coefficient-weighted basis expansion chosen from a Pareto archive."""

    def __init__(self, transform: BasisTransform, abnormal_clusters: dict[str, np.ndarray]):
        self.name = "mopso"
        self.transform = transform
        self.c_x = {c: np.mean(transform(np.atleast_2d(p)), axis=0) for c, p in abnormal_clusters.items()}

    def frame(self, cluster: PersonalNormalCluster) -> DeviationFrame:
        c_n = np.mean(self.transform(cluster.points), axis=0)
        return DeviationFrame(self.transform, c_n, self.c_x)


def deviation_analysis(frame: DeviationFrame, x: np.ndarray) -> str:
    """Yellow label: the abnormal centroid whose direction from ``x`` best
    continues the direction from the normal centroid to ``x``."""
    z = np.asarray(frame.transform(np.asarray(x, dtype=float)), dtype=float)
    v_n = z - frame.c_n
    if not np.any(v_n):
        nearest = min(ABNORMAL, key=lambda c: (float(np.linalg.norm(frame.c_x[c] - z)), ABNORMAL.index(c)))
        return nearest + "y"
    dist = {c: float(cosine_distance(v_n, frame.c_x[c] - z)) for c in ABNORMAL if c in frame.c_x}
    best = min(dist, key=lambda c: (dist[c] if np.isfinite(dist[c]) else np.inf, ABNORMAL.index(c)))
    return best + "y"


# --------------------------------------------------------------------------
# Streams
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AlarmLabel:
    value: str
    stage: str  # "global" or "personal"
    time_index: int
    patient_id: str
    truth: str = ""
    timestamp_s: float = 0.0

    def __post_init__(self):
        if self.value not in ALARM_VALUES:
            raise ValueError(f"unknown alarm label {self.value!r}")
        if self.value.endswith("r") and self.stage != "global":
            raise ValueError("red alarms come only from the global stage")
        if self.value.endswith("y") and self.stage != "personal":
            raise ValueError("yellow alarms come only from the personal stage")

    @property
    def final_class(self) -> str:
        return self.value[0]


@dataclass
class StreamResult:
    patient_id: str
    labels: list[AlarmLabel] = field(default_factory=list)
    skipped: bool = False
    diagnostic: str = ""
    init_size: int = 0


def process_stream(
    samples: list[FeatureSample],
    model: GlobalModel,
    abnormal_clusters: dict[str, np.ndarray],
    space=None,
    config: PersonalConfig = PersonalConfig(),
    global_labels: list[str] | None = None,
) -> StreamResult:
    """Label one patient's time-ordered samples.

    Samples inside the first ``init_window_s`` seconds only seed the personal
    cluster (those the global stage calls normal) and are not labelled.  If
    the cluster later shrinks below two members, globally normal samples are
    accepted as normal until it holds two again.
    """
    space = IdentitySpace(abnormal_clusters) if space is None else space
    pid = samples[0].patient_id if samples else ""
    result = StreamResult(pid)
    if not samples:
        result.skipped, result.diagnostic = True, "empty stream"
        return result
    if global_labels is None:
        global_labels = classify_global_many(model, np.array([s.x for s in samples]))

    t0 = samples[0].timestamp_s
    cluster = PersonalNormalCluster(pid, config.window_s, config.refresh_every)
    start = len(samples)
    for i, s in enumerate(samples):
        if s.timestamp_s - t0 >= config.init_window_s:
            start = i
            break
        if global_labels[i] == "N":
            cluster.add(s.x, s.timestamp_s)
    result.init_size = len(cluster)
    if len(cluster) < 2:
        result.skipped = True
        result.diagnostic = f"only {len(cluster)} normal samples in the initial window"
        log.warning("patient %s skipped: %s", pid, result.diagnostic)
        return result

    cached_version, cached_frame = None, None
    for i in range(start, len(samples)):
        s = samples[i]
        g = global_labels[i]
        if g != "N":
            result.labels.append(AlarmLabel(g + "r", "global", s.time_index, pid, s.true_label, s.timestamp_s))
            continue
        if len(cluster) < 2:
            cluster.add(s.x, s.timestamp_s)
            result.labels.append(AlarmLabel("N", "personal", s.time_index, pid, s.true_label, s.timestamp_s))
            continue
        metrics = compute_deviation_metrics(cluster.points, abnormal_clusters, s.x, cluster.r_max)
        if confirm_normal(metrics, config):
            cluster.add(s.x, s.timestamp_s)
            result.labels.append(AlarmLabel("N", "personal", s.time_index, pid, s.true_label, s.timestamp_s))
            continue
        if cached_version != cluster.version:
            cached_frame, cached_version = space.frame(cluster), cluster.version
        label = deviation_analysis(cached_frame, s.x)
        result.labels.append(AlarmLabel(label, "personal", s.time_index, pid, s.true_label, s.timestamp_s))
    return result


def write_alarm_csv(labels: Iterable[AlarmLabel], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["patient", "time_index", "stage", "label", "truth"])
        for a in labels:
            writer.writerow([a.patient_id, a.time_index, a.stage, a.value, a.truth])


def write_alarm_jsonl(labels: Iterable[AlarmLabel], path: str | Path) -> None:
    with Path(path).open("w") as fh:
        for a in labels:
            fh.write(json.dumps(asdict(a), sort_keys=True) + "\n")


def read_alarm_csv(path: str | Path) -> list[AlarmLabel]:
    with Path(path).open(newline="") as fh:
        return [
            AlarmLabel(r["label"], r["stage"], int(r["time_index"]), r["patient"], r["truth"])
            for r in csv.DictReader(fh)
        ]
