"""Basis-function expansion and multi-objective particle swarm search.

A candidate transform is a unit coefficient vector ``w`` over a basis set;
a sample maps to ``z = w * psi(x)`` (element-wise).  Two objectives are
minimised: o1, the reciprocal of the smallest cosine distance between
abnormal centroid vectors (symmetry), and o2 = SW / SB, the inverse Fisher
ratio (separability).
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import cosine_distance

log = logging.getLogger(__name__)

INF = math.inf


class SwarmConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# Basis
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BasisSet:
    """Monomial basis; each term is a tuple of feature indices (empty = constant)."""

    dim: int
    terms: tuple[tuple[int, ...], ...]

    @property
    def size(self) -> int:
        return len(self.terms)

    @property
    def names(self) -> list[str]:
        out = []
        for t in self.terms:
            if not t:
                out.append("1")
            else:
                out.append("*".join(f"x{i + 1}" for i in t))
        return out

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        """psi(x) for one vector or each row of a matrix."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.dim:
            raise ValueError(f"basis expects {self.dim} features, got {X.shape[1]}")
        out = np.empty((X.shape[0], self.size))
        for l, t in enumerate(self.terms):
            col = np.ones(X.shape[0])
            for i in t:
                col = col * X[:, i]
            out[:, l] = col
        return out[0] if single else out

    def linear_mask(self) -> np.ndarray:
        return np.array([len(t) == 1 for t in self.terms])


def polynomial_basis(dim: int, degree: int = 2) -> BasisSet:
    """Constant, linear terms, cross terms (i < j), then squares.

    For degree 2 and dim 8 this gives 1 + 8 + 28 + 8 = 45 terms.
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    terms: list[tuple[int, ...]] = [()]
    terms += [(i,) for i in range(dim)]
    if degree >= 2:
        terms += list(itertools.combinations(range(dim), 2))
        terms += [(i, i) for i in range(dim)]
    for deg in range(3, degree + 1):
        terms += list(itertools.combinations_with_replacement(range(dim), deg))
    return BasisSet(dim, tuple(terms))


def linear_basis(dim: int) -> BasisSet:
    return BasisSet(dim, tuple((i,) for i in range(dim)))


def expand(basis: BasisSet, w: np.ndarray, x: np.ndarray, check_norm: bool = True) -> np.ndarray:
    """z_l = w_l * psi_l(x)."""
    w = np.asarray(w, dtype=float)
    if check_norm and abs(np.linalg.norm(w) - 1.0) > 1e-9:
        raise ValueError("coefficient vector must have unit norm")
    return basis.evaluate(x) * w


def identity_coefficients(basis: BasisSet) -> np.ndarray:
    """Uniform weight on the linear terms: the untransformed space up to scale."""
    mask = basis.linear_mask().astype(float)
    return mask / np.linalg.norm(mask)


# --------------------------------------------------------------------------
# Objectives
# --------------------------------------------------------------------------

def objective_symmetry(centroids: dict[str, np.ndarray], normal: str = "N") -> float:
    """1 / min pairwise cosine distance of v^X = c_N - c^X over abnormal X."""
    c_n = np.asarray(centroids[normal], dtype=float)
    vecs = [c_n - np.asarray(c, dtype=float) for k, c in centroids.items() if k != normal]
    if len(vecs) < 2:
        raise ValueError("symmetry needs at least two abnormal clusters")
    dmin = INF
    for a, b in itertools.combinations(vecs, 2):
        d = float(cosine_distance(a, b))
        dmin = min(dmin, d if np.isfinite(d) else 0.0)
    return INF if dmin <= 1e-15 else 1.0 / dmin


def objective_separability(clusters: dict[str, np.ndarray]) -> float:
    """SW / SB with SB summed over ordered pairs of distinct clusters."""
    cents = {}
    sw = 0.0
    for k, pts in clusters.items():
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if len(pts) == 0:
            raise ValueError(f"cluster {k} is empty")
        cents[k] = pts.mean(axis=0)
        sw += float(np.sum((pts - cents[k]) ** 2))
    sb = sum(
        float(np.sum((cents[a] - cents[b]) ** 2))
        for a in cents for b in cents if a != b
    )
    return INF if sb <= 0 else sw / sb


class ObjectiveEvaluator:
    """Both objectives for many ``w`` without materialising expanded clusters.

    Everything reduces to per-coordinate moments of psi, because the expanded
    centroid is ``w * mean(psi)`` and the scatter is ``sum_l w_l^2 * S_l``.
    """

    def __init__(self, clusters: dict[str, np.ndarray], basis: BasisSet, normal: str = "N",
                 max_points: int = 2000, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.basis = basis
        self.normal = normal
        self.labels = list(clusters)
        if normal not in clusters:
            raise ValueError(f"normal cluster {normal!r} missing")
        means, scatters = [], []
        for k in self.labels:
            pts = np.atleast_2d(np.asarray(clusters[k], dtype=float))
            if len(pts) == 0:
                raise ValueError(f"cluster {k} is empty")
            if len(pts) > max_points:
                pts = pts[np.sort(rng.choice(len(pts), max_points, replace=False))]
            psi = basis.evaluate(pts)
            mu = psi.mean(axis=0)
            means.append(mu)
            scatters.append(np.sum((psi - mu) ** 2, axis=0))
        self.means = np.array(means)
        self.scatter = np.sum(scatters, axis=0)
        diffs = self.means[:, None, :] - self.means[None, :, :]
        self.between = np.sum(diffs ** 2, axis=(0, 1))
        n_idx = self.labels.index(normal)
        self.abnormal_vecs = np.array(
            [self.means[n_idx] - self.means[j] for j in range(len(self.labels)) if j != n_idx]
        )
        if len(self.abnormal_vecs) < 2:
            raise ValueError("need at least two abnormal clusters")

    def __call__(self, w: np.ndarray) -> tuple[float, float]:
        w2 = np.asarray(w, dtype=float) ** 2
        sb = float(w2 @ self.between)
        o2 = INF if sb <= 0 else float(w2 @ self.scatter) / sb
        V = self.abnormal_vecs * np.sqrt(w2)
        dmin = INF
        for a, b in itertools.combinations(range(len(V)), 2):
            d = float(cosine_distance(V[a], V[b]))
            dmin = min(dmin, d if np.isfinite(d) else 0.0)
        o1 = INF if dmin <= 1e-15 else 1.0 / dmin
        return o1, o2


# --------------------------------------------------------------------------
# Pareto archive
# --------------------------------------------------------------------------

def dominates(a, b) -> bool:
    return a[0] <= b[0] and a[1] <= b[1] and (a[0] < b[0] or a[1] < b[1])


@dataclass
class ArchiveEntry:
    w: np.ndarray
    o1: float
    o2: float

    @property
    def objectives(self) -> tuple[float, float]:
        return (self.o1, self.o2)


def crowding_distance(points: np.ndarray) -> np.ndarray:
    n = len(points)
    if n <= 2:
        return np.full(n, INF)
    cd = np.zeros(n)
    for m in range(points.shape[1]):
        order = np.argsort(points[:, m], kind="stable")
        vals = points[order, m]
        span = vals[-1] - vals[0]
        cd[order[0]] = cd[order[-1]] = INF
        if span > 0:
            cd[order[1:-1]] += (vals[2:] - vals[:-2]) / span
    return cd


def lower_hull(points: np.ndarray) -> set[int]:
    """Indices of lower-left convex hull vertices (minimisers of some
    nonnegative weighting of the two objectives)."""
    order = sorted(range(len(points)), key=lambda i: (points[i][0], points[i][1]))
    hull: list[int] = []
    for i in order:
        while len(hull) >= 2:
            (x1, y1), (x2, y2), (x3, y3) = points[hull[-2]], points[hull[-1]], points[i]
            if (x2 - x1) * (y3 - y1) - (y2 - y1) * (x3 - x1) <= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    # keep the monotone (decreasing o2) part of the lower hull
    keep, best = set(), INF
    for i in hull:
        if points[i][1] < best:
            keep.add(i)
            best = points[i][1]
    return keep


class ParetoArchive:
    def __init__(self, capacity: int = 100):
        if capacity < 1:
            raise SwarmConfigError("archive capacity must be >= 1")
        self.capacity = capacity
        self.entries: list[ArchiveEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def objectives(self) -> np.ndarray:
        return np.array([e.objectives for e in self.entries]).reshape(-1, 2)

    def add(self, w: np.ndarray, objs: tuple[float, float]) -> bool:
        if not all(np.isfinite(objs)):
            return False
        for e in self.entries:
            if dominates(e.objectives, objs) or e.objectives == tuple(objs):
                return False
        self.entries = [e for e in self.entries if not dominates(objs, e.objectives)]
        self.entries.append(ArchiveEntry(np.array(w, dtype=float), float(objs[0]), float(objs[1])))
        if len(self.entries) > self.capacity:
            self._prune()
        return True

    def _prune(self) -> None:
        pts = self.objectives()
        protected = lower_hull(pts)
        cd = crowding_distance(pts)
        while len(self.entries) > self.capacity:
            candidates = [i for i in range(len(self.entries)) if i not in protected] or list(range(len(self.entries)))
            drop = min(candidates, key=lambda i: (cd[i], i))
            del self.entries[drop]
            pts = self.objectives()
            protected = lower_hull(pts)
            cd = crowding_distance(pts)

    def is_nondominated(self) -> bool:
        objs = [e.objectives for e in self.entries]
        return not any(dominates(a, b) for a in objs for b in objs)

    def sorted(self) -> list[ArchiveEntry]:
        return sorted(self.entries, key=lambda e: (e.o1, e.o2))

    def scalarized_best(self, beta: float) -> float:
        pts = self.objectives()
        return float(np.min(beta * pts[:, 0] + (1 - beta) * pts[:, 1])) if len(pts) else INF

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        ents = self.sorted()
        d = len(ents[0].w) if ents else 0
        writer.writerow(["o1", "o2"] + [f"w_{l + 1}" for l in range(d)])
        for e in ents:
            writer.writerow([repr(e.o1), repr(e.o2)] + [repr(float(v)) for v in e.w])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, capacity: int = 100) -> "ParetoArchive":
        rows = list(csv.reader(io.StringIO(text)))
        arch = cls(capacity)
        for row in rows[1:]:
            vals = [float(v) for v in row]
            arch.entries.append(ArchiveEntry(np.array(vals[2:]), vals[0], vals[1]))
        return arch


# --------------------------------------------------------------------------
# MOPSO
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MopsoConfig:
    swarm_size: int = 50
    iterations: int = 100
    inertia: float = 0.7
    cognitive: float = 1.5
    social: float = 1.5
    archive_size: int = 100
    seed: int = 0
    max_points: int = 2000  # per-cluster subsample for objective evaluation
    mutation: float = 0.5  # turbulence probability at iteration 0, decays to 0

    def __post_init__(self):
        if self.swarm_size < 1 or self.iterations < 0:
            raise SwarmConfigError("swarm_size must be >= 1 and iterations >= 0")
        if min(self.inertia, self.cognitive, self.social, self.mutation) < 0:
            raise SwarmConfigError("swarm weights must be non-negative")
        if self.archive_size < 1:
            raise SwarmConfigError("archive_size must be >= 1")


@dataclass
class MopsoResult:
    archive: ParetoArchive
    basis: BasisSet
    history: list[np.ndarray] = field(default_factory=list)  # archive objectives per iteration


def _unit(v: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = np.linalg.norm(v)
    while n == 0 or not np.isfinite(n):
        v = rng.normal(size=v.shape)
        n = np.linalg.norm(v)
    return v / n


def mopso(
    clusters: dict[str, np.ndarray],
    basis: BasisSet,
    config: MopsoConfig = MopsoConfig(),
    normal: str = "N",
    initial: list[np.ndarray] | None = None,
) -> MopsoResult:
    """Search unit coefficient vectors for a Pareto front of (o1, o2).

    Each particle owns a generator spawned from the seed, so the result does
    not depend on evaluation order.  ``initial`` holds known coefficient
    vectors: all of them enter the archive, and the first ``swarm_size``
    replace the particles' random starting positions.
    """
    evaluate = ObjectiveEvaluator(clusters, basis, normal, config.max_points, config.seed)
    root = np.random.SeedSequence(config.seed)
    guide_rng = np.random.default_rng(root.spawn(1)[0])
    rngs = [np.random.default_rng(s) for s in root.spawn(config.swarm_size)]
    dim = basis.size

    initial = [np.asarray(w0, dtype=float) for w0 in (initial or [])]
    pos = np.array([_unit(r.normal(size=dim), r) for r in rngs])
    spread = np.linspace(0, len(initial) - 1, min(len(initial), config.swarm_size)).round().astype(int)
    for i, j in enumerate(spread):
        pos[i] = _unit(initial[j], rngs[i])
    vel = np.zeros_like(pos)
    objs = [evaluate(w) for w in pos]
    pbest, pbest_obj = pos.copy(), list(objs)

    archive = ParetoArchive(config.archive_size)
    for w0 in initial:
        w0 = w0 / np.linalg.norm(w0)
        archive.add(w0, evaluate(w0))
    for w, o in zip(pos, objs):
        archive.add(w, o)
    if len(archive) == 0:
        raise SwarmConfigError("no particle produced finite objectives; check the clusters")
    history = [archive.objectives().copy()]

    for it in range(config.iterations):
        guides = _select_guides(archive, config.swarm_size, guide_rng)
        # turbulence shrinks as the search proceeds
        decay = (1.0 - it / config.iterations) ** 2
        for i, rng in enumerate(rngs):
            r1, r2 = rng.random(dim), rng.random(dim)
            vel[i] = (config.inertia * vel[i]
                      + config.cognitive * r1 * (pbest[i] - pos[i])
                      + config.social * r2 * (guides[i] - pos[i]))
            new = pos[i] + vel[i]
            if rng.random() < config.mutation * decay:
                j = rng.integers(dim)
                new[j] += rng.normal(scale=decay)
            pos[i] = _unit(new, rng)
            objs[i] = evaluate(pos[i])
            if dominates(objs[i], pbest_obj[i]) or (
                not dominates(pbest_obj[i], objs[i]) and rng.random() < 0.5
            ):
                if all(np.isfinite(objs[i])):
                    pbest[i], pbest_obj[i] = pos[i].copy(), objs[i]
        for w, o in zip(pos, objs):
            archive.add(w, o)
        history.append(archive.objectives().copy())
    return MopsoResult(archive, basis, history)


def _select_guides(archive: ParetoArchive, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws from the less crowded half of the archive."""
    cd = crowding_distance(archive.objectives())
    order = sorted(range(len(archive)), key=lambda i: (-cd[i], i))
    pool = order[:max(1, (len(order) + 1) // 2)]
    picks = rng.integers(0, len(pool), size=n)
    return np.array([archive.entries[pool[p]].w for p in picks])


def knee_point(archive: ParetoArchive) -> ArchiveEntry:
    """Member farthest from the chord joining the front's two extremes
    (objectives rescaled to [0, 1])."""
    ents = archive.sorted()
    if not ents:
        raise SwarmConfigError("empty archive")
    if len(ents) <= 2:
        return min(ents, key=lambda e: e.o1 + e.o2)
    pts = np.array([e.objectives for e in ents])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    P = (pts - lo) / np.where(hi > lo, hi - lo, 1.0)
    a, b = P[0], P[-1]
    chord = b - a
    norm = np.linalg.norm(chord)
    if norm == 0:
        return ents[0]
    dist = np.abs(chord[0] * (P[:, 1] - a[1]) - chord[1] * (P[:, 0] - a[0])) / norm
    return ents[int(np.argmax(dist))]


def select_operating_point(archive: ParetoArchive, beta: float | None = None) -> ArchiveEntry:
    """Knee point by default; with ``beta`` the minimiser of beta*o1 + (1-beta)*o2."""
    if beta is None:
        return knee_point(archive)
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    return min(archive.sorted(), key=lambda e: beta * e.o1 + (1 - beta) * e.o2)


def front_weakly_dominates(front_a: np.ndarray, front_b: np.ndarray, rtol: float = 1e-9) -> bool:
    """Every point of ``front_b`` is matched or beaten on both objectives by a
    point of ``front_a`` (``rtol`` absorbs summation-order rounding)."""
    slack = 1.0 + rtol
    return all(any(a[0] <= b[0] * slack and a[1] <= b[1] * slack for a in front_a) for b in front_b)


def embed_coefficients(w: np.ndarray, source: BasisSet, target: BasisSet) -> np.ndarray:
    """Coefficients of ``source`` placed on the matching terms of ``target``."""
    index = {t: l for l, t in enumerate(target.terms)}
    out = np.zeros(target.size)
    for l, t in enumerate(source.terms):
        if t not in index:
            raise ValueError(f"term {t} of the source basis is missing from the target")
        out[index[t]] = w[l]
    return out


def nested_search(
    clusters: dict[str, np.ndarray],
    dim: int,
    degree: int = 2,
    config: MopsoConfig = MopsoConfig(),
    normal: str = "N",
) -> tuple[MopsoResult, MopsoResult]:
    """Linear-basis search, then the polynomial search warm-started from the
    embedded linear front.  The linear model is the polynomial model with
    zero weight on every non-linear term, so the richer search starts from
    everything the simpler one found.
    """
    lin = mopso(clusters, linear_basis(dim), config, normal)
    poly_basis = polynomial_basis(dim, degree)
    seeds = [embed_coefficients(e.w, lin.basis, poly_basis) for e in lin.archive.sorted()]
    poly = mopso(clusters, poly_basis, config, normal, initial=seeds)
    return lin, poly


@dataclass(frozen=True)
class BasisTransform:
    """The numerical transform chosen from a Pareto archive."""

    basis: BasisSet
    w: np.ndarray

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return expand(self.basis, self.w, X)

    def to_dict(self) -> dict:
        return {"kind": "mopso", "dim": self.basis.dim,
                "terms": [list(t) for t in self.basis.terms], "w": self.w.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "BasisTransform":
        basis = BasisSet(doc["dim"], tuple(tuple(t) for t in doc["terms"]))
        return cls(basis, np.asarray(doc["w"], dtype=float))


def write_archive_csv(archive: ParetoArchive, path: str | Path) -> None:
    Path(path).write_text(archive.to_csv())
