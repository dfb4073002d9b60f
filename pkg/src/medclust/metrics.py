"""Clustering quality metrics: entropies, NMI, homogeneity, the four-way
harmonic S score, and within-cluster cosine dissimilarities D_I / D_D with
their harmonic D_score.

All entropies use natural logs; NMI and homogeneity are ratios, so the
base cancels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateLabelsError,
    EmptyInputError,
    ZeroTargetEntropyError,
    ZeroVectorError,
)


def entropy(labels) -> float:
    """H = -sum p ln p over label proportions; 0 ln 0 contributes 0."""
    labels = list(labels)
    if not labels:
        raise EmptyInputError("entropy of an empty label list")
    _, counts = np.unique(np.asarray(labels, dtype=object).astype(str), return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def _contingency(y, y_hat) -> np.ndarray:
    y = np.asarray(list(y), dtype=object).astype(str)
    y_hat = np.asarray(list(y_hat), dtype=object).astype(str)
    if y.shape != y_hat.shape:
        raise ValueError("label sequences differ in length")
    if y.size == 0:
        raise EmptyInputError("empty label sequences")
    _, yi = np.unique(y, return_inverse=True)
    _, ci = np.unique(y_hat, return_inverse=True)
    table = np.zeros((yi.max() + 1, ci.max() + 1))
    np.add.at(table, (yi, ci), 1.0)
    return table


def _conditional_entropy(table: np.ndarray) -> float:
    """H(y | y_hat) from a contingency table (rows y, columns y_hat)."""
    n = table.sum()
    h = 0.0
    for j in range(table.shape[1]):
        col = table[:, j]
        nc = col.sum()
        if nc == 0:
            continue
        p = col[col > 0] / nc
        h += (nc / n) * float(-(p * np.log(p)).sum())
    return h


def nmi(y, y_hat) -> float:
    """2 I(y, y_hat) / (H(y) + H(y_hat))."""
    table = _contingency(y, y_hat)
    h_y = entropy(y)
    h_c = entropy(y_hat)
    if h_y + h_c == 0:
        raise DegenerateLabelsError("both label sequences are constant")
    mutual = h_y - _conditional_entropy(table)
    return float(min(max(2.0 * mutual / (h_y + h_c), 0.0), 1.0))


def homogeneity(y, y_hat) -> float:
    """1 - H(y | y_hat) / H(y)."""
    table = _contingency(y, y_hat)
    h_y = entropy(y)
    if h_y == 0:
        raise ZeroTargetEntropyError("target labels are constant")
    return float(min(max(1.0 - _conditional_entropy(table) / h_y, 0.0), 1.0))


def s_score(hs_b: float, hs_m: float, nmi_b: float, nmi_m: float) -> float:
    """Harmonic mean of the four label metrics; 0 when any input is 0."""
    parts = (hs_b, hs_m, nmi_b, nmi_m)
    if any(p < 0 for p in parts):
        raise ValueError(f"metric inputs must be >= 0, got {parts}")
    if any(p == 0 for p in parts):
        return 0.0
    return 4.0 / sum(1.0 / p for p in parts)


def cosine_distance(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ZeroVectorError("cosine distance of a zero vector")
    return float(1.0 - (u @ v) / (nu * nv))


def cluster_dissimilarity(embeddings: np.ndarray, labels,
                          n_clusters: int | None = None,
                          include_singletons: bool = True) -> "DissimilarityResult":
    """Mean pairwise cosine distance per cluster and the unweighted mean.

    Clusters with fewer than two members have no pairs; by default they
    contribute 0 to the mean and are flagged, with ``include_singletons=False``
    they are left out of the mean entirely.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(list(labels))
    if X.shape[0] != labels.shape[0]:
        raise ValueError("embeddings and labels differ in length")
    kappa = int(n_clusters if n_clusters is not None else labels.max() + 1)
    norms = np.linalg.norm(X, axis=1)
    if (norms == 0).any():
        raise ZeroVectorError("cluster member with a zero embedding")
    unit = X / norms[:, None]
    per_cluster = np.zeros(kappa)
    small = []
    for c in range(kappa):
        members = unit[labels == c]
        k = members.shape[0]
        if k < 2:
            small.append(c)
            continue
        sims = members @ members.T
        iu = np.triu_indices(k, 1)
        per_cluster[c] = float((1.0 - sims[iu]).mean())
    kept = per_cluster
    if not include_singletons:
        kept = np.delete(per_cluster, small)
    overall = float(kept.mean()) if kept.size else 0.0
    spread = float(kept.std()) if kept.size else 0.0
    return DissimilarityResult(per_cluster, overall, spread, small)


@dataclass
class DissimilarityResult:
    per_cluster: np.ndarray
    mean: float
    std: float
    undersized_clusters: list[int]


def d_score(d_i: float, d_d: float) -> tuple[float, bool]:
    """Harmonic mean of the two dissimilarities; (0, True) flags a zero input."""
    if d_i < 0 or d_d < 0:
        raise ValueError("dissimilarities must be >= 0")
    if d_i == 0 or d_d == 0:
        return 0.0, True
    return 2.0 * d_i * d_d / (d_i + d_d), False


def composition_report(labels, targets: dict[str, list],
                       n_clusters: int | None = None) -> list[dict]:
    """Per-cluster size and label mixture for each target variable."""
    labels = np.asarray(list(labels))
    kappa = int(n_clusters if n_clusters is not None else labels.max() + 1)
    report = []
    for c in range(kappa):
        members = labels == c
        entry = {"cluster": c, "size": int(members.sum())}
        for name, values in targets.items():
            values = np.asarray(list(values), dtype=object).astype(str)
            mix = {}
            if members.any():
                cats, counts = np.unique(values[members], return_counts=True)
                mix = {str(cat): float(cnt / members.sum())
                       for cat, cnt in zip(cats, counts)}
            entry[name] = mix
        report.append(entry)
    return report


@dataclass
class EvaluationReport:
    """Everything measured for one clustering run."""

    nmi_m: float
    nmi_b: float
    hs_m: float
    hs_b: float
    s: float
    d_i: float
    d_i_std: float
    d_d: float
    d_d_std: float
    d: float
    d_zero_flag: bool = False
    singleton_clusters: int = 0
    composition: list[dict] = field(default_factory=list)
    context: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = dict(self.__dict__)
        payload["composition"] = self.composition
        return json.dumps(payload, indent=2)


def evaluate_clustering(labels, y_m, y_b,
                        image_embeddings: np.ndarray | None = None,
                        diagnosis_embeddings: np.ndarray | None = None,
                        n_clusters: int | None = None,
                        context: dict | None = None) -> EvaluationReport:
    """Assemble the full report for one labeling against both targets."""
    kappa = int(n_clusters if n_clusters is not None else np.asarray(list(labels)).max() + 1)
    nmi_m = nmi(y_m, labels)
    nmi_b = nmi(y_b, labels)
    hs_m = homogeneity(y_m, labels)
    hs_b = homogeneity(y_b, labels)
    s = s_score(hs_b, hs_m, nmi_b, nmi_m)
    d_i = d_i_std = d_d = d_d_std = 0.0
    singletons = 0
    if image_embeddings is not None:
        res = cluster_dissimilarity(image_embeddings, labels, kappa)
        d_i, d_i_std = res.mean, res.std
        singletons = max(singletons, len(res.undersized_clusters))
    if diagnosis_embeddings is not None:
        res = cluster_dissimilarity(diagnosis_embeddings, labels, kappa)
        d_d, d_d_std = res.mean, res.std
        singletons = max(singletons, len(res.undersized_clusters))
    d, flag = d_score(d_i, d_d)
    comp = composition_report(labels, {"modality": y_m, "body_part": y_b}, kappa)
    return EvaluationReport(nmi_m=nmi_m, nmi_b=nmi_b, hs_m=hs_m, hs_b=hs_b, s=s,
                            d_i=d_i, d_i_std=d_i_std, d_d=d_d, d_d_std=d_d_std,
                            d=d, d_zero_flag=flag, singleton_clusters=singletons,
                            composition=comp, context=context or {})
