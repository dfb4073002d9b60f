"""Combining per-source representations into one flat vector per instance.

Three schemes: raw embedding concatenation, min-max-normalised distances to
each source's cluster centers, and softmax probabilities over those
distances. Source order is fixed: diagnosis, tags, image.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    IdMisalignmentError,
    NonFiniteDistanceError,
    RowMismatchError,
)
from .rnem import EmbeddingMatrix

SOURCE_ORDER = ("diagnosis", "tags", "image")

EMBEDDINGS = "embeddings"
CLUSTERDISTS = "clusterdists"
CLUSTERPROBS = "clusterprobs"


def _check_alignment(sources: list[EmbeddingMatrix]) -> list[str]:
    if not sources:
        raise ValueError("no sources to fuse")
    n = sources[0].n
    ids = sources[0].ids
    for m in sources[1:]:
        if m.n != n:
            raise RowMismatchError(f"row counts differ: {n} vs {m.n}")
        if m.ids != ids:
            raise IdMisalignmentError("instance id order differs between sources")
    return list(ids)


def fuse_embeddings(sources: list[EmbeddingMatrix]) -> EmbeddingMatrix:
    """Row-wise concatenation; a single source passes through as a copy."""
    ids = _check_alignment(sources)
    data = np.hstack([m.data for m in sources])
    label = "+".join(m.source or "?" for m in sources)
    return EmbeddingMatrix(ids, data, source=f"fused[{label}]")


@dataclass
class DistanceNormalizer:
    """Frozen min-max statistics for cluster-distance fusion.

    scope: 'column' (per distance column), 'source' (one range per source
    block) or 'global' (one range over everything).
    """

    mins: list[np.ndarray]
    maxs: list[np.ndarray]
    scope: str = "column"
    zero_range_columns: int = 0

    def to_json(self) -> str:
        return json.dumps({
            "scope": self.scope,
            "mins": [m.tolist() for m in self.mins],
            "maxs": [m.tolist() for m in self.maxs],
            "zero_range_columns": self.zero_range_columns,
        })

    @classmethod
    def from_json(cls, text: str) -> "DistanceNormalizer":
        d = json.loads(text)
        return cls([np.asarray(m) for m in d["mins"]],
                   [np.asarray(m) for m in d["maxs"]],
                   d.get("scope", "column"), d.get("zero_range_columns", 0))


def fit_distance_normalizer(distances: list[np.ndarray],
                            scope: str = "column") -> DistanceNormalizer:
    """Learn min-max ranges on training-split distance matrices."""
    if scope not in ("column", "source", "global"):
        raise ValueError(f"unknown normalization scope {scope!r}")
    mins, maxs, zero = [], [], 0
    if scope == "global":
        lo = min(float(d.min()) for d in distances)
        hi = max(float(d.max()) for d in distances)
        for d in distances:
            mins.append(np.full(d.shape[1], lo))
            maxs.append(np.full(d.shape[1], hi))
        zero += int(hi == lo) * sum(d.shape[1] for d in distances)
    else:
        for d in distances:
            if scope == "source":
                lo = np.full(d.shape[1], float(d.min()))
                hi = np.full(d.shape[1], float(d.max()))
            else:
                lo = d.min(axis=0).astype(float)
                hi = d.max(axis=0).astype(float)
            zero += int((hi == lo).sum())
            mins.append(lo)
            maxs.append(hi)
    return DistanceNormalizer(mins, maxs, scope, zero)


def fuse_clusterdists(distances: list[np.ndarray],
                      normalizer: DistanceNormalizer,
                      ids: list[str]) -> EmbeddingMatrix:
    """Concatenate normalised distance-to-center blocks (dim = sum of kappas).

    Constant training columns map to 0; apply-time values outside the
    training range stay unclamped, mirroring the frozen-statistics policy.
    """
    if len(distances) != len(normalizer.mins):
        raise RowMismatchError("normalizer does not cover every source")
    blocks = []
    for d, lo, hi in zip(distances, normalizer.mins, normalizer.maxs):
        d = np.asarray(d, dtype=np.float64)
        if not np.isfinite(d).all():
            raise NonFiniteDistanceError("non-finite distance")
        span = hi - lo
        safe = np.where(span == 0, 1.0, span)
        block = (d - lo) / safe
        block[:, span == 0] = 0.0
        blocks.append(block)
    return EmbeddingMatrix(list(ids), np.hstack(blocks), source="fused[clusterdists]")


def fuse_clusterprobs(distances: list[np.ndarray], ids: list[str]) -> EmbeddingMatrix:
    """Per-source softmax of negated distances (max-subtracted for stability)."""
    blocks = []
    for d in distances:
        d = np.asarray(d, dtype=np.float64)
        if not np.isfinite(d).all():
            raise NonFiniteDistanceError("non-finite distance")
        shifted = -(d - d.min(axis=1, keepdims=True))
        expd = np.exp(shifted)
        blocks.append(expd / expd.sum(axis=1, keepdims=True))
    return EmbeddingMatrix(list(ids), np.hstack(blocks), source="fused[clusterprobs]")
