"""Constructed fixtures shared by the unit and acceptance tests."""

import numpy as np

from ecg_alarm.geometry import cosine_distance


def label_flip_fixture():
    """2-D scene with a wide V cluster and a narrow F cluster.

    The V centroid sits close to the normal centroid, the F centroid far away at
    60 degrees; the sample leans toward V (25 degrees) but the raw cosine
    distance prefers F because V's centroid is so near.
    """
    c_n = np.zeros(2)
    cents = {"V": np.array([1.0, 0.0]), "F": 4 * np.array([np.cos(np.pi / 3), np.sin(np.pi / 3)])}
    a = np.deg2rad(25)
    x = 0.6 * np.array([np.cos(a), np.sin(a)])
    return c_n, cents, x


def nearest_by_deviation(z, c_n, cents):
    v = z - c_n
    dist = {k: float(cosine_distance(v, c - z)) for k, c in cents.items()}
    return min(dist, key=dist.get)


def nonlinear_clusters(seed, d=8, n=300):
    """Abnormal clusters that differ from one another mainly by which axis has
    the large variance; a quadratic basis can separate them, a linear one
    cannot do much."""
    rng = np.random.default_rng(seed)
    base = rng.normal(0, 0.3, d)
    clusters = {"N": rng.normal(0, 0.5, (n, d))}
    for j, k in enumerate("VSF"):
        scale = np.full(d, 0.5)
        scale[j] = 2.0
        clusters[k] = base * (1 + 0.2 * j) + rng.normal(0, 1, (n, d)) * scale
    return clusters


def blob_clusters(seed, d=8):
    rng = np.random.default_rng(seed)
    clusters = {"N": rng.normal(0, 1, (400, d))}
    for k in "VSF":
        clusters[k] = rng.normal(rng.normal(0, 2, d), rng.uniform(0.5, 1.5), (150, d))
    return clusters
