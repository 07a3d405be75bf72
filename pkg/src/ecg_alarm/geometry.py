"""Deterministic controlled spatial transformation.

The transform moves the normal centroid to the origin and reshapes angles so
that the abnormal centroid directions become mutually orthogonal (the targets
come from Gram-Schmidt on the centroid matrix), then rescales radii so every
abnormal centroid lands at radius 1.

Angles are handled in hyper-spherical coordinates.  Before converting, the
shifted space is rotated so that the span of the centroid vectors occupies the
last ``k`` axes; a seeded search over rotations inside that span picks one for
which every angular dimension has consistently ordered target points (a
monotone map through crossing targets does not exist).  The rotation is undone
at the end, so outputs live in the original axes.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import ortho_group

log = logging.getLogger(__name__)

# bracket for u = alpha * run; slope(u) = (rise/run) * u / expm1(u)
U_BOUNDS = (1e-9, 700.0)


class DegenerateGeometryError(ValueError):
    """Centroid vectors are (nearly) linearly dependent."""


# --------------------------------------------------------------------------
# Hyper-spherical coordinates
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SphericalVector:
    r: float
    theta: np.ndarray  # d-1 angles; the last one in (-pi, pi]

    @property
    def dim(self) -> int:
        return len(self.theta) + 1


def spherical_coords(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised Cartesian -> (radius, angles) over the last axis.

    Uses the atan2 form of the arccos expressions, which is identical in value
    but stays accurate near the coordinate axes.  Zero tails give angle 0.
    """
    X = np.asarray(X, dtype=float)
    d = X.shape[-1]
    if d < 2:
        raise ValueError("hyper-spherical coordinates need d >= 2")
    sq = X ** 2
    # tail[..., i] = sqrt(sum_{j > i} x_j^2)
    tail = np.sqrt(np.cumsum(sq[..., ::-1], axis=-1)[..., ::-1])
    r = tail[..., 0]
    theta = np.empty(X.shape[:-1] + (d - 1,))
    for i in range(d - 2):
        theta[..., i] = np.arctan2(tail[..., i + 1], X[..., i])
    theta[..., d - 2] = np.arctan2(X[..., d - 1] + 0.0, X[..., d - 2])
    # canonical zero angles where the remaining tail vanishes
    for i in range(d - 1):
        theta[..., i] = np.where(tail[..., i] == 0.0, 0.0, theta[..., i])
    # arctan2(+0, negative) = pi already; fold -pi onto pi
    theta[..., d - 2] = np.where(theta[..., d - 2] <= -math.pi, math.pi, theta[..., d - 2])
    return r, theta


def cartesian_coords(r: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Vectorised (radius, angles) -> Cartesian."""
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    d = theta.shape[-1] + 1
    sin_prod = np.cumprod(np.sin(theta), axis=-1)
    X = np.empty(theta.shape[:-1] + (d,))
    X[..., 0] = np.cos(theta[..., 0])
    for i in range(1, d - 1):
        X[..., i] = np.cos(theta[..., i]) * sin_prod[..., i - 1]
    X[..., d - 1] = sin_prod[..., d - 2]
    return X * r[..., None]


def to_spherical(x: np.ndarray) -> SphericalVector:
    r, theta = spherical_coords(np.asarray(x, dtype=float))
    return SphericalVector(float(r), theta)


def to_cartesian(s: SphericalVector) -> np.ndarray:
    return cartesian_coords(np.asarray(s.r), s.theta)


def cosine_distance(v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """1 - cos(angle); broadcasts over leading axes.  NaN when a vector is zero."""
    v, w = np.asarray(v, dtype=float), np.asarray(w, dtype=float)
    num = np.sum(v * w, axis=-1)
    den = np.sqrt(np.sum(v * v, axis=-1) * np.sum(w * w, axis=-1))
    with np.errstate(invalid="ignore", divide="ignore"):
        return 1.0 - num / den


# --------------------------------------------------------------------------
# Gram-Schmidt and the centroid frame
# --------------------------------------------------------------------------

def gram_schmidt(C: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Orthogonalise columns without normalising; the first column is unchanged."""
    C = np.asarray(C, dtype=float)
    out = np.empty_like(C)
    for j in range(C.shape[1]):
        col = C[:, j].copy()
        for m in range(j):
            u = out[:, m]
            col -= (C[:, j] @ u) / (u @ u) * u
        in_norm = np.linalg.norm(C[:, j])
        if np.linalg.norm(col) < tol * max(in_norm, 1e-300):
            raise DegenerateGeometryError(
                f"centroid vector {j} is linearly dependent on the previous ones"
            )
        out[:, j] = col
    return out


@dataclass(frozen=True)
class CentroidFrame:
    c_n: np.ndarray
    C: np.ndarray  # (d, k): abnormal centroid minus normal centroid
    C_perp: np.ndarray
    classes: tuple[str, ...]

    @property
    def dim(self) -> int:
        return self.C.shape[0]

    @property
    def k(self) -> int:
        return self.C.shape[1]


def build_frame(c_n: np.ndarray, abnormal_centroids: dict[str, np.ndarray]) -> CentroidFrame:
    """``abnormal_centroids`` is ordered; its first class keeps its direction."""
    c_n = np.asarray(c_n, dtype=float)
    classes = tuple(abnormal_centroids)
    if len(classes) > len(c_n):
        raise DegenerateGeometryError(
            f"{len(classes)} abnormal clusters cannot be orthogonal in {len(c_n)} dimensions"
        )
    C = np.column_stack([np.asarray(abnormal_centroids[c], dtype=float) - c_n for c in classes])
    return CentroidFrame(c_n, C, gram_schmidt(C), classes)


# --------------------------------------------------------------------------
# Angular targets and mapping functions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LogitSegmentParams:
    alpha_g: float
    alpha_h: float
    k_g: float
    k_h: float

    def __post_init__(self):
        if self.alpha_g <= 0 or self.alpha_h <= 0:
            raise ValueError("logit sharpness parameters must be positive")

    @property
    def slope_mismatch(self) -> float:
        # one-sided derivatives at the target are -alpha_g*K_g and alpha_h*K_h
        return abs(-self.alpha_g * self.k_g - self.alpha_h * self.k_h)


@dataclass(frozen=True)
class AngularTargets:
    """Target points of one angular dimension, boundary points included."""

    xs: np.ndarray  # strictly increasing, xs[0] = 0, xs[-1] = upper
    ys: np.ndarray
    upper: float
    identity: bool = False
    params: tuple[LogitSegmentParams, ...] = ()

    @property
    def interior(self) -> tuple[np.ndarray, np.ndarray]:
        return self.xs[1:-1], self.ys[1:-1]

    def regions(self):
        """(gamma, delta, eps) and their images for every interior target."""
        dx, dy = self.interior
        bx = np.concatenate([[0.0], (dx[:-1] + dx[1:]) / 2, [self.upper]])
        by = np.concatenate([[0.0], (dy[:-1] + dy[1:]) / 2, [self.upper]])
        return [
            (bx[j], dx[j], bx[j + 1], by[j], dy[j], by[j + 1]) for j in range(len(dx))
        ]


def make_targets(points, upper: float, dedupe_tol: float = 1e-12) -> AngularTargets:
    """Assemble boundary and interior points; flags identity on ordering conflicts."""
    pts = sorted((float(a), float(b)) for a, b in points)
    merged: list[tuple[float, float]] = []
    for a, b in pts:
        if merged and abs(a - merged[-1][0]) <= dedupe_tol and abs(b - merged[-1][1]) <= dedupe_tol:
            continue
        merged.append((a, b))
    # points equal to the identity on a boundary carry no information
    merged = [
        (a, b) for a, b in merged
        if not (abs(a) <= dedupe_tol and abs(b) <= dedupe_tol)
        and not (abs(a - upper) <= dedupe_tol and abs(b - upper) <= dedupe_tol)
    ]
    xs = np.array([0.0] + [a for a, _ in merged] + [upper])
    ys = np.array([0.0] + [b for _, b in merged] + [upper])
    if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
        return AngularTargets(np.array([0.0, upper]), np.array([0.0, upper]), upper, identity=True)
    return AngularTargets(xs, ys, upper)


def eval_piecewise_linear(targets: AngularTargets, x):
    x = np.asarray(x, dtype=float)
    if np.any((x < 0) | (x > targets.upper)):
        log.warning("angle outside [0, %g] clamped", targets.upper)
        x = np.clip(x, 0.0, targets.upper)
    return np.interp(x, targets.xs, targets.ys)


def _secant_kernel(alpha: float, rise: float, run: float) -> float:
    """alpha * K for one half-region: the slope of the map at its target point."""
    return alpha * rise / math.expm1(alpha * run) if alpha * run < 700 else 0.0


def solve_logit_params(gamma, delta, eps, gamma_p, delta_p, eps_p, alpha_g: float = 1.0) -> LogitSegmentParams:
    """K_g, K_h and a matching alpha_h so both halves share the slope at delta.

    The slope constraint reads alpha_g*|K_g| = alpha_h*|K_h| (K_g < 0 < K_h).
    If no alpha_h exists for the requested alpha_g, alpha_h is pinned to the
    same value and alpha_g is solved instead.
    """
    if alpha_g <= 0:
        raise ValueError("alpha_g must be positive")
    rise_g, run_g = delta_p - gamma_p, delta - gamma
    rise_h, run_h = eps_p - delta_p, eps - delta

    def solve(rise, run, slope):
        # reachable slopes are (0, rise/run); solve in u so short runs need no special bound
        lo, hi = U_BOUNDS
        f = lambda u: _secant_kernel(u, rise / run, 1.0) - slope  # noqa: E731  (decreasing in u)
        if f(lo) <= 0 or f(hi) >= 0:
            return None
        return brentq(f, lo, hi, xtol=1e-14, rtol=8.9e-16, maxiter=500) / run

    a_g = alpha_g
    slope = _secant_kernel(a_g, rise_g, run_g)
    a_h = solve(rise_h, run_h, slope)
    if a_h is None:
        a_h = alpha_g
        a_g = solve(rise_g, run_g, _secant_kernel(a_h, rise_h, run_h))
        if a_g is None:  # pragma: no cover - both halves at the bound
            a_g = a_h = U_BOUNDS[0] / max(run_g, run_h)
    k_g = (gamma_p - delta_p) / math.expm1(a_g * run_g)
    k_h = (eps_p - delta_p) / math.expm1(a_h * run_h)
    return LogitSegmentParams(a_g, a_h, k_g, k_h)


def with_logit_params(targets: AngularTargets, alpha_g: float = 1.0) -> AngularTargets:
    if targets.identity:
        return targets
    params = tuple(solve_logit_params(*reg, alpha_g=alpha_g) for reg in targets.regions())
    return AngularTargets(targets.xs, targets.ys, targets.upper, False, params)


def eval_logit_map(targets: AngularTargets, x, params=None):
    """Inverse-logit map: exponential halves meeting at each target point."""
    params = targets.params if params is None else params
    x = np.asarray(x, dtype=float)
    if targets.identity:
        return x.copy()
    if any(p.alpha_g <= 0 or p.alpha_h <= 0 for p in params):
        raise ValueError("logit sharpness parameters must be positive")
    if np.any((x < 0) | (x > targets.upper)):
        log.warning("angle outside [0, %g] clamped", targets.upper)
        x = np.clip(x, 0.0, targets.upper)
    regions = targets.regions()
    edges = np.array([reg[2] for reg in regions[:-1]])
    idx = np.searchsorted(edges, x, side="left")
    out = np.empty_like(x)
    for j, (reg, p) in enumerate(zip(regions, params)):
        sel = idx == j
        if not np.any(sel):
            continue
        _, delta, _, _, delta_p, _ = reg
        xj = x[sel]
        below = np.maximum(delta - xj, 0.0)
        above = np.maximum(xj - delta, 0.0)
        out[sel] = np.where(
            xj <= delta,
            p.k_g * np.expm1(p.alpha_g * below) + delta_p,
            p.k_h * np.expm1(p.alpha_h * above) + delta_p,
        )
    return out


# --------------------------------------------------------------------------
# Rotation that makes every angular dimension orderable
# --------------------------------------------------------------------------

def _span_rotation(frame: CentroidFrame) -> tuple[np.ndarray, np.ndarray]:
    """(complement rows, span basis B) with B orthonormal columns spanning C."""
    B = frame.C_perp / np.linalg.norm(frame.C_perp, axis=0)
    Q, _ = np.linalg.qr(np.column_stack([B, np.eye(frame.dim)]))
    complement = Q[:, frame.k:frame.dim]
    return complement.T, B


def _target_pairs(frame: CentroidFrame, anchor: str):
    """Source and destination vectors (in the frame's k-dim span coordinates)."""
    if anchor == "centroid":
        return frame.C, frame.C_perp
    if anchor == "difference":
        v0, v0p = frame.C[:, :1], frame.C_perp[:, :1]
        return frame.C[:, 1:] - v0, frame.C_perp[:, 1:] - v0p
    raise ValueError(f"unknown anchor {anchor!r}")


def _active_angles(Y: np.ndarray) -> np.ndarray:
    """Angles of k-dim span coordinates embedded after d-k zeros: the last k-1."""
    _, theta = spherical_coords(Y)
    theta = theta.copy()
    theta[..., -1] = np.mod(theta[..., -1], 2 * math.pi)
    return theta


def _ordering_margin(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Per candidate: smallest gap between consecutive target points, over all
    active dimensions and both coordinates (negative when ordering conflicts).

    src, dst: (n_candidates, n_points, k-1) angles.
    """
    n_cand, _, n_dims = src.shape
    margin = np.full(n_cand, np.inf)
    for i in range(n_dims):
        upper = 2 * math.pi if i == n_dims - 1 else math.pi
        a, b = src[:, :, i], dst[:, :, i]
        order = np.argsort(a, axis=1)
        a_s = np.take_along_axis(a, order, axis=1)
        b_s = np.take_along_axis(b, order, axis=1)
        zeros = np.zeros((n_cand, 1))
        ups = np.full((n_cand, 1), upper)
        ga = np.diff(np.hstack([zeros, a_s, ups]), axis=1) / upper
        gb = np.diff(np.hstack([zeros, b_s, ups]), axis=1) / upper
        # a target fixed by the map (a == b) may sit anywhere; drop gaps that
        # collapse only because two identity points coincide
        margin = np.minimum(margin, np.minimum(ga.min(axis=1), gb.min(axis=1)))
    return margin


def search_rotation(frame: CentroidFrame, anchor: str = "centroid", n_candidates: int = 4096,
                    seed: int = 0) -> tuple[np.ndarray, float]:
    """Best rotation of the centroid span by ordering margin.

    Returns the full (d, d) rotation and its margin.
    """
    k = frame.k
    comp_rows, B = _span_rotation(frame)
    src, dst = _target_pairs(frame, anchor)
    src_k, dst_k = B.T @ src, B.T @ dst  # (k, m)
    if k == 1:
        return np.vstack([comp_rows, B.T]), 1.0
    rng = np.random.default_rng(seed)
    U = ortho_group.rvs(k, size=n_candidates, random_state=rng) if k > 1 else np.ones((n_candidates, 1, 1))
    U = U.reshape(n_candidates, k, k)
    U[0] = np.eye(k)
    a = _active_angles(np.einsum("nij,jm->nmi", U, src_k))
    b = _active_angles(np.einsum("nij,jm->nmi", U, dst_k))
    margins = _ordering_margin(a, b)
    best = int(np.argmax(margins))
    R = np.vstack([comp_rows, U[best] @ B.T])
    return R, float(margins[best])


# --------------------------------------------------------------------------
# Whole transform
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SpatialTransform:
    frame: CentroidFrame
    rotation: np.ndarray  # (d, d) orthogonal
    targets: tuple[AngularTargets, ...]  # one per angle, d-1 in total
    variant: str  # "linear" or "logit"
    anchor: str
    margin: float
    radii: np.ndarray = field(default=None)  # original centroid radii
    directions: np.ndarray = field(default=None)  # (k, d) unit target directions, rotated axes

    @property
    def identity_dims(self) -> list[int]:
        return [i for i, t in enumerate(self.targets) if t.identity]

    def map_angles(self, theta: np.ndarray) -> np.ndarray:
        out = np.array(theta, dtype=float, copy=True)
        last = out.shape[-1] - 1
        for i, tgt in enumerate(self.targets):
            col = out[..., i]
            if i == last:
                col = np.mod(col, 2 * math.pi)
            if not tgt.identity:
                col = (eval_logit_map(tgt, col) if self.variant == "logit"
                       else eval_piecewise_linear(tgt, col))
            if i == last:
                col = np.where(col > math.pi, col - 2 * math.pi, col)
            out[..., i] = col
        return out

    def radius_factor(self, direction: np.ndarray) -> np.ndarray:
        """Interpolated centroid radius rho for unit directions (rotated axes)."""
        dist = np.clip(cosine_distance(direction[..., None, :], self.directions), 0.0, None)
        hit = dist < 1e-13
        with np.errstate(divide="ignore"):
            w = np.where(hit, 0.0, 1.0 / np.where(hit, 1.0, dist))
        rho = np.sum(w * self.radii, axis=-1) / np.maximum(np.sum(w, axis=-1), 1e-300)
        any_hit = hit.any(axis=-1)
        exact = self.radii[np.argmax(hit, axis=-1)]
        return np.where(any_hit, exact, rho)

    def radius_map(self, r, direction) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        rho = self.radius_factor(np.asarray(direction, dtype=float))
        return np.where(r <= rho, r / rho, 1.0 + (r - rho))

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return apply_transform(self, X)

    def to_json(self) -> str:
        return json.dumps(transform_to_dict(self), sort_keys=True)


def build_transform(
    frame: CentroidFrame,
    variant: str = "logit",
    alpha_g: float = 1.0,
    anchor: str = "centroid",
    seed: int = 0,
    n_candidates: int = 4096,
) -> SpatialTransform:
    if variant not in ("linear", "logit"):
        raise ValueError(f"unknown mapping variant {variant!r}")
    d, k = frame.dim, frame.k
    R, margin = search_rotation(frame, anchor, n_candidates, seed)
    src, dst = _target_pairs(frame, anchor)
    comp_rows, B = _span_rotation(frame)
    span_rows = R[d - k:]
    # exact zeros off the span keep the off-span angles at pi/2
    Ys = np.zeros((src.shape[1], d))
    Yd = np.zeros((dst.shape[1], d))
    Ys[:, d - k:] = (span_rows @ src).T
    Yd[:, d - k:] = (span_rows @ dst).T
    _, th_s = spherical_coords(Ys)
    _, th_d = spherical_coords(Yd)
    targets = []
    for i in range(d - 1):
        upper = 2 * math.pi if i == d - 2 else math.pi
        a, b = th_s[:, i], th_d[:, i]
        if i == d - 2:
            a, b = np.mod(a, upper), np.mod(b, upper)
        tgt = make_targets(zip(a, b), upper)
        if tgt.identity:
            log.warning("angular dimension %d has crossing targets; identity map used", i + 1)
        if variant == "logit":
            tgt = with_logit_params(tgt, alpha_g)
        targets.append(tgt)

    directions = np.ascontiguousarray((R @ (frame.C_perp / np.linalg.norm(frame.C_perp, axis=0))).T)
    radii = np.linalg.norm(frame.C, axis=0)
    return SpatialTransform(frame, R, tuple(targets), variant, anchor, margin, radii, directions)


def apply_transform(T: SpatialTransform, X: np.ndarray) -> np.ndarray:
    """z = R^T cart(T_r(r), T_i(theta_i)) with (r, theta) = sph(R (x - c_N))."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    Y = np.atleast_2d(X - T.frame.c_n) @ T.rotation.T
    r, theta = spherical_coords(Y)
    theta = T.map_angles(theta)
    unit = cartesian_coords(np.ones_like(r), theta)
    r_new = T.radius_map(r, unit)
    Z = (unit * r_new[:, None]) @ T.rotation
    return Z[0] if single else Z


def transformed_centroids(T: SpatialTransform) -> dict[str, np.ndarray]:
    cents = T.frame.C.T + T.frame.c_n
    Z = apply_transform(T, cents)
    return dict(zip(T.frame.classes, Z))


# --------------------------------------------------------------------------
# Serialisation
# --------------------------------------------------------------------------

def transform_to_dict(T: SpatialTransform) -> dict:
    return {
        "kind": "deterministic",
        "variant": T.variant,
        "anchor": T.anchor,
        "margin": T.margin,
        "classes": list(T.frame.classes),
        "c_n": T.frame.c_n.tolist(),
        "C": T.frame.C.tolist(),
        "C_perp": T.frame.C_perp.tolist(),
        "rotation": T.rotation.tolist(),
        "radii": T.radii.tolist(),
        "directions": T.directions.tolist(),
        "targets": [
            {
                "xs": t.xs.tolist(), "ys": t.ys.tolist(), "upper": t.upper,
                "identity": t.identity,
                "alphas": [[p.alpha_g, p.alpha_h, p.k_g, p.k_h] for p in t.params],
            }
            for t in T.targets
        ],
    }


def transform_from_dict(doc: dict) -> SpatialTransform:
    frame = CentroidFrame(
        np.asarray(doc["c_n"]), np.asarray(doc["C"]), np.asarray(doc["C_perp"]), tuple(doc["classes"])
    )
    targets = tuple(
        AngularTargets(
            np.asarray(t["xs"]), np.asarray(t["ys"]), t["upper"], t["identity"],
            tuple(LogitSegmentParams(*a) for a in t["alphas"]),
        )
        for t in doc["targets"]
    )
    return SpatialTransform(
        frame, np.asarray(doc["rotation"]), targets, doc["variant"], doc["anchor"], doc["margin"],
        np.asarray(doc["radii"]), np.asarray(doc["directions"]),
    )
