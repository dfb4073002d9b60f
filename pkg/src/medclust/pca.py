"""Principal component analysis with three interchangeable solvers.

``full`` takes the exact LAPACK SVD, ``iterative`` the ARPACK Lanczos path,
and ``randomized`` a seeded Halko range-finder sketch (oversampling 10,
7 power iterations). All three agree on the retained subspace up to
per-component sign.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import svds

from .errors import DimensionMismatchError, NonFiniteInputError, RankTooLowError
from .rnem import EmbeddingMatrix

_OVERSAMPLE = 10
_POWER_ITERATIONS = 7


@dataclass
class PcaModel:
    mean: np.ndarray              # (d,)
    components: np.ndarray        # (d, k), orthonormal columns
    explained_variance: np.ndarray  # (k,), non-increasing
    solver: str
    rank_deficient: bool = False

    @property
    def k(self) -> int:
        return self.components.shape[1]


def _fix_signs(components: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude loading of each component positive."""
    flips = np.sign(components[np.abs(components).argmax(axis=0),
                               np.arange(components.shape[1])])
    flips[flips == 0] = 1.0
    return components * flips


def pca_fit(X: np.ndarray | EmbeddingMatrix, k: int,
            solver: str = "full", seed: int = 0) -> PcaModel:
    if isinstance(X, EmbeddingMatrix):
        X = X.data
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError(f"need a 2-D matrix with n >= 2, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise NonFiniteInputError("pca_fit input contains non-finite values")
    n, d = X.shape
    if not 1 <= k <= min(n - 1, d):
        raise ValueError(f"k={k} outside [1, min(n-1, d)] = [1, {min(n - 1, d)}]")

    mean = X.mean(axis=0)
    Xc = X - mean

    if solver == "full":
        _, s, vt = np.linalg.svd(Xc, full_matrices=False)
        s, vt = s[:k], vt[:k]
    elif solver == "iterative":
        if k >= min(n, d):
            raise ValueError("iterative solver needs k < min(n, d); use solver='full'")
        rng = np.random.default_rng(seed)
        v0 = rng.standard_normal(min(n, d))
        u, s, vt = svds(Xc, k=k, tol=1e-9, v0=v0)
        order = np.argsort(s)[::-1]
        s, vt = s[order], vt[order]
    elif solver == "randomized":
        rng = np.random.default_rng(seed)
        sketch = min(k + _OVERSAMPLE, d)
        Y = Xc @ rng.standard_normal((d, sketch))
        Q, _ = np.linalg.qr(Y)
        for _ in range(_POWER_ITERATIONS):
            W, _ = np.linalg.qr(Xc.T @ Q)
            Q, _ = np.linalg.qr(Xc @ W)
        B = Q.T @ Xc
        _, s, vt = np.linalg.svd(B, full_matrices=False)
        s, vt = s[:k], vt[:k]
    else:
        raise ValueError(f"unknown solver {solver!r}")

    scale = s[0] if s.size and s[0] > 0 else 1.0
    deficient = bool(s.size and s[-1] <= scale * max(n, d) * np.finfo(np.float64).eps)
    if deficient and solver != "full":
        # sketch/Lanczos directions beyond the rank are arbitrary; refuse to
        # hand back padding
        raise RankTooLowError(
            f"k={k} exceeds the effective rank; use solver='full' or lower k")

    components = _fix_signs(vt.T)
    explained = (s ** 2) / (n - 1)
    return PcaModel(mean=mean, components=components,
                    explained_variance=explained, solver=solver,
                    rank_deficient=deficient)


def pca_transform(model: PcaModel, X: np.ndarray | EmbeddingMatrix) -> np.ndarray:
    if isinstance(X, EmbeddingMatrix):
        X = X.data
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != model.mean.shape[0]:
        raise DimensionMismatchError(
            f"matrix has {X.shape[1]} columns, model expects {model.mean.shape[0]}")
    out = (X - model.mean) @ model.components
    return out
