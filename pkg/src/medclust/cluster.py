"""k-means and PAM k-medoids over Euclidean/cosine distances, plus Kneedle.

k-means is plain Lloyd with k-means++ seeding and restart selection by
inertia; cosine distance is a k-medoids-only pairing. The elbow picker runs
Kneedle on a decreasing convex inertia curve with sensitivity 1 and no
smoothing.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatchError,
    KappaExceedsNError,
    ZeroVectorWithCosineError,
)

KMEANS = "kmeans"
KMEDOIDS = "kmedoids"
EUCLIDEAN = "euclidean"
COSINE = "cosine"

DEFAULT_KAPPA_GRID = (5, 10, 15, 20, 25, 30, 40, 50, 75, 100, 150)


@dataclass
class ClusterModel:
    algorithm: str
    metric: str
    kappa: int
    centers: np.ndarray            # (kappa, d); medoid rows for k-medoids
    seed: int
    inertia: float
    medoid_indices: list[int] | None = None
    empty_cluster_reseeds: int = 0

    def save(self, path: str | Path) -> None:
        """Metadata as JSON plus the center matrix in RNEM format."""
        from .rnem import EmbeddingMatrix, write_rnem

        path = Path(path)
        meta = {
            "algorithm": self.algorithm,
            "metric": self.metric,
            "kappa": self.kappa,
            "seed": self.seed,
            "inertia": self.inertia,
            "medoid_indices": self.medoid_indices,
            "empty_cluster_reseeds": self.empty_cluster_reseeds,
        }
        path.write_text(json.dumps(meta, indent=2))
        centers64 = self.centers.astype("<f4").astype(np.float64)
        write_rnem(EmbeddingMatrix([f"c{i}" for i in range(self.kappa)],
                                   centers64, source="centers"),
                   path.with_suffix(".centers.rnem"))

    @classmethod
    def load(cls, path: str | Path) -> "ClusterModel":
        from .rnem import read_rnem

        path = Path(path)
        meta = json.loads(path.read_text())
        centers = read_rnem(path.with_suffix(".centers.rnem")).data
        return cls(meta["algorithm"], meta["metric"], meta["kappa"], centers,
                   meta["seed"], meta["inertia"], meta["medoid_indices"],
                   meta.get("empty_cluster_reseeds", 0))


def _sq_euclidean_to(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """(n, kappa) squared Euclidean distances."""
    sq = np.maximum(
        (X ** 2).sum(axis=1)[:, None] - 2.0 * X @ centers.T
        + (centers ** 2).sum(axis=1)[None, :], 0.0)
    return sq


def _cosine_to(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    xn = np.linalg.norm(X, axis=1)
    cn = np.linalg.norm(centers, axis=1)
    if (xn == 0).any() or (cn == 0).any():
        raise ZeroVectorWithCosineError("cosine distance is undefined on zero rows")
    sim = (X / xn[:, None]) @ (centers / cn[:, None]).T
    return np.clip(1.0 - sim, 0.0, 2.0)


def pairwise_distances(X: np.ndarray, metric: str) -> np.ndarray:
    if metric == COSINE:
        D = _cosine_to(X, X)
    else:
        D = np.sqrt(_sq_euclidean_to(X, X))
    np.fill_diagonal(D, 0.0)
    return D


def _kmeans_pp(X: np.ndarray, kappa: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((kappa, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = _sq_euclidean_to(X, centers[:1]).ravel()
    for c in range(1, kappa):
        total = d2.sum()
        if total <= 0:
            centers[c] = X[rng.integers(n)]
        else:
            centers[c] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, _sq_euclidean_to(X, centers[c:c + 1]).ravel())
    return centers


def _lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int,
           rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, float, int]:
    kappa = centers.shape[0]
    labels = np.full(X.shape[0], -1)
    prev_inertia = np.inf
    reseeds = 0
    for _ in range(max_iter):
        d2 = _sq_euclidean_to(X, centers)
        new_labels = d2.argmin(axis=1)
        inertia = d2[np.arange(X.shape[0]), new_labels].sum()
        assert inertia <= prev_inertia + 1e-8 * max(1.0, prev_inertia if np.isfinite(prev_inertia) else 1.0), \
            "Lloyd iteration increased the inertia"
        prev_inertia = inertia
        for c in range(kappa):
            members = new_labels == c
            if members.any():
                centers[c] = X[members].mean(axis=0)
            else:
                # re-seed an empty cluster with the point farthest from its center
                far = d2[np.arange(X.shape[0]), new_labels].argmax()
                centers[c] = X[far]
                new_labels[far] = c
                reseeds += 1
        if (new_labels == labels).all():
            labels = new_labels
            break
        labels = new_labels
    d2 = _sq_euclidean_to(X, centers)
    labels = d2.argmin(axis=1)
    inertia = float(d2[np.arange(X.shape[0]), labels].sum())
    return labels, centers, inertia, reseeds


def kmeans_fit(X: np.ndarray, kappa: int, seed: int = 0,
               max_iter: int = 300, n_init: int = 10) -> ClusterModel:
    X = np.asarray(X, dtype=np.float64)
    if kappa > X.shape[0]:
        raise KappaExceedsNError(f"kappa={kappa} > n={X.shape[0]}")
    best = None
    for restart in range(n_init):
        rng = np.random.default_rng((seed, restart))
        centers = _kmeans_pp(X, kappa, rng)
        _, centers, inertia, reseeds = _lloyd(X, centers, max_iter, rng)
        if best is None or inertia < best[0]:
            best = (inertia, centers, reseeds)
    inertia, centers, reseeds = best
    return ClusterModel(KMEANS, EUCLIDEAN, kappa, centers, seed, float(inertia),
                        empty_cluster_reseeds=reseeds)


def _pam_build(D: np.ndarray, kappa: int) -> list[int]:
    n = D.shape[0]
    medoids = [int(D.sum(axis=1).argmin())]
    nearest = D[:, medoids[0]].copy()
    while len(medoids) < kappa:
        gains = np.maximum(nearest[:, None] - D, 0.0).sum(axis=0)
        gains[medoids] = -np.inf
        best = int(gains.argmax())
        medoids.append(best)
        nearest = np.minimum(nearest, D[:, best])
    return medoids


_EXACT_SUBSET_LIMIT = 2000


def kmedoids_fit(X: np.ndarray, kappa: int, metric: str = EUCLIDEAN,
                 seed: int = 0, max_iter: int = 100) -> ClusterModel:
    """PAM: greedy BUILD then best-improvement SWAP passes.

    Tiny instances (medoid subset count under a small limit) are solved
    exactly by enumeration instead; SWAP can stall in a local optimum there
    and exhaustive search is cheaper than one SWAP pass anyway.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if kappa > n:
        raise KappaExceedsNError(f"kappa={kappa} > n={n}")
    D = pairwise_distances(X, metric)
    if math.comb(n, kappa) <= _EXACT_SUBSET_LIMIT:
        best_cost, best_subset = np.inf, None
        for subset in itertools.combinations(range(n), kappa):
            cost = float(D[:, subset].min(axis=1).sum())
            if cost < best_cost - 1e-15:
                best_cost, best_subset = cost, subset
        medoids = sorted(best_subset)
        return ClusterModel(KMEDOIDS, metric, kappa, X[medoids].copy(), seed,
                            best_cost, medoid_indices=[int(m) for m in medoids])
    medoids = _pam_build(D, kappa)

    def cost_of(meds: list[int]) -> float:
        return float(D[:, meds].min(axis=1).sum())

    cost = cost_of(medoids)
    for _ in range(max_iter):
        best_swap, best_cost = None, cost
        medoid_idx = np.array(medoids)
        for mi in range(len(medoids)):
            others = np.delete(medoid_idx, mi)
            rest = D[:, others].min(axis=1) if others.size else np.full(n, np.inf)
            trials = np.minimum(rest[:, None], D).sum(axis=0)  # cost per candidate h
            trials[medoid_idx] = np.inf
            h = int(trials.argmin())
            if trials[h] < best_cost - 1e-12:
                best_cost, best_swap = float(trials[h]), (mi, h)
        if best_swap is None:
            break
        medoids[best_swap[0]] = best_swap[1]
        assert best_cost < cost, "PAM accepted a non-improving swap"
        cost = best_cost

    medoids = sorted(medoids)
    cost = cost_of(medoids)
    return ClusterModel(KMEDOIDS, metric, kappa, X[medoids].copy(), seed,
                        cost, medoid_indices=[int(m) for m in medoids])


def assign(model: ClusterModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest center/medoid labels plus the full (n, kappa) distance matrix.

    Distances are plain metric distances (Euclidean for k-means models);
    ties break to the lowest cluster index.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != model.centers.shape[1]:
        raise DimensionMismatchError(
            f"matrix has {X.shape[1]} columns, model expects {model.centers.shape[1]}")
    if model.metric == COSINE:
        dists = _cosine_to(X, model.centers)
    else:
        dists = np.sqrt(_sq_euclidean_to(X, model.centers))
    return dists.argmin(axis=1), dists


def elbow(inertias, kappa_grid=DEFAULT_KAPPA_GRID) -> tuple[int, bool]:
    """Kneedle knee of a decreasing convex curve; returns (kappa, found).

    When the difference curve is flat (no curvature) the grid midpoint is
    returned with found=False.
    """
    y = np.asarray(list(inertias), dtype=np.float64)
    x = np.asarray(list(kappa_grid), dtype=np.float64)
    if len(x) < 3:
        raise ValueError("kappa grid needs at least 3 points")
    if len(x) != len(y):
        raise ValueError("inertia list and kappa grid differ in length")
    if (np.diff(x) <= 0).any():
        raise ValueError("kappa grid must be strictly increasing")
    x_n = (x - x.min()) / (x.max() - x.min())
    span = y.max() - y.min()
    if span <= 0:
        return int(x[len(x) // 2]), False
    y_n = (y - y.min()) / span
    # map the decreasing convex curve to concave increasing, then take the
    # maximum of the difference curve (sensitivity 1, no smoothing)
    difference = (1.0 - y_n) - x_n
    if difference.max() <= 1e-12:
        return int(x[len(x) // 2]), False
    return int(x[int(difference.argmax())]), True
