"""Shared fixtures and independent brute-force oracles.

The oracles deliberately avoid the library's vectorised code paths: plain
dict counting, scalar loops and math.fsum, so metric tests compare two
genuinely different routes to the same quantity.
"""

from __future__ import annotations

import math
from collections import Counter

import numpy as np
import pytest


# --- label-metric oracles -----------------------------------------------------

def entropy_oracle(labels) -> float:
    labels = list(labels)
    n = len(labels)
    counts = Counter(labels)
    return -math.fsum((c / n) * math.log(c / n) for c in counts.values())


def conditional_entropy_oracle(y, y_hat) -> float:
    y, y_hat = list(y), list(y_hat)
    n = len(y)
    clusters: dict = {}
    for target, cluster in zip(y, y_hat):
        clusters.setdefault(cluster, []).append(target)
    return math.fsum((len(members) / n) * entropy_oracle(members)
                     for members in clusters.values())


def nmi_oracle(y, y_hat) -> float:
    h_y = entropy_oracle(y)
    h_c = entropy_oracle(y_hat)
    mutual = h_y - conditional_entropy_oracle(y, y_hat)
    return 2.0 * mutual / (h_y + h_c)


def homogeneity_oracle(y, y_hat) -> float:
    h_y = entropy_oracle(y)
    return 1.0 - conditional_entropy_oracle(y, y_hat) / h_y


# --- dissimilarity oracle -------------------------------------------------------

def cosine_distance_oracle(u, v) -> float:
    dot = math.fsum(float(a) * float(b) for a, b in zip(u, v))
    nu = math.sqrt(math.fsum(float(a) * float(a) for a in u))
    nv = math.sqrt(math.fsum(float(b) * float(b) for b in v))
    return 1.0 - dot / (nu * nv)


def dissimilarity_oracle(X, labels, kappa) -> tuple[list[float], float, float]:
    X = np.asarray(X, dtype=np.float64)
    labels = list(labels)
    per_cluster = []
    for c in range(kappa):
        rows = [i for i, lab in enumerate(labels) if lab == c]
        if len(rows) < 2:
            per_cluster.append(0.0)
            continue
        dists = [cosine_distance_oracle(X[i], X[j])
                 for a, i in enumerate(rows) for j in rows[a + 1:]]
        per_cluster.append(math.fsum(dists) / len(dists))
    mean = math.fsum(per_cluster) / kappa
    var = math.fsum((v - mean) ** 2 for v in per_cluster) / kappa
    return per_cluster, mean, math.sqrt(var)


# --- windowing oracle -----------------------------------------------------------

def window_oracle_scalar(x_rescaled: float, w_c: float, w_w: float,
                         invert: bool = False) -> int:
    """Direct scalar evaluation of the piecewise 8-bit window transform."""
    w_l = w_c - w_w / 2.0
    w_u = w_c + w_w / 2.0
    r = (1.0 / w_w) * (x_rescaled - w_c + 0.5 * w_w) * 255.0
    v = math.copysign(math.floor(abs(r) + 0.5), r)
    v = min(max(v, 0.0), 255.0)
    if x_rescaled <= w_l:
        v = 0.0
    if x_rescaled >= w_u:
        v = 255.0
    out = int(v)
    return 255 - out if invert else out


# --- data helpers ----------------------------------------------------------------

def gaussian_blobs(n_per: int, centers: np.ndarray, sigma: float,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    points, labels = [], []
    for c, center in enumerate(centers):
        points.append(rng.normal(0.0, sigma, size=(n_per, centers.shape[1])) + center)
        labels += [c] * n_per
    X = np.vstack(points)
    order = rng.permutation(X.shape[0])
    return X[order], np.asarray(labels)[order]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
